#pragma once

#include <string>

#include "msp/data.hpp"

namespace msp {

struct SynthConfig {
  int image_w = 128, image_h = 128;
  int min_objects = 1, max_objects = 4;
  double min_height = 6.0, max_height = 48.0;
  int classes = 4;  // distinguished by shape and intensity
  double small_prob = 0.5;  // chance of drawing the height from [min, 16)
  int clutter_blobs = 6;
  std::uint64_t seed = 1;
  int count = 100;
};

struct SynthResult {
  DatasetIndex index;
  int total_objects = 0;
  int small_objects = 0;  // height < 16 px
};

// Writes <out_dir>/images/img_#####.pgm, gt.csv and manifest.txt.
// Deterministic under seed; guarantees >= 30% of objects below 16 px height
// (placement keeps pairwise IoU < 0.3 and boxes fully inside the image).
SynthResult generate_synthetic(const SynthConfig& cfg, const std::string& out_dir);

// Renders one object into a standalone mask (test hook for the render-back
// check). Returns the object's occupancy mask of the full image.
std::vector<unsigned char> render_object_mask(int image_w, int image_h,
                                              int class_id, const Box& box);

}  // namespace msp
