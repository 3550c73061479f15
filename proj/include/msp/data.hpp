#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msp/box.hpp"

namespace msp {

struct GroundTruth {
  std::string image_id;
  Box box;
  int class_id = 0;
  std::string view;  // optional per-image camera view tag
  double height() const { return box.height(); }
};

struct Detection {
  std::string image_id;
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct DatasetItem {
  std::string image_id;
  std::string path;
  std::vector<GroundTruth> gts;
  std::string view;
};

struct DatasetIndex {
  std::vector<DatasetItem> items;
  int num_classes = 0;
};

// Binary PGM (P5) / PPM (P6), maxval 255. Values scaled to [0,1],
// channel-first (1, C, H, W); optional per-channel mean subtraction.
Tensor load_pnm(const std::string& path,
                const std::vector<double>& channel_means = {});
void write_pgm(const std::string& path, const std::vector<unsigned char>& pixels,
               int width, int height);
void write_ppm(const std::string& path, const std::vector<unsigned char>& rgb,
               int width, int height);

// Detection CSV: image_id,class_id,score,x_min,y_min,x_max,y_max (6 decimals).
void write_detections_csv(const std::string& path,
                          const std::vector<Detection>& dets);
std::vector<Detection> read_detections_csv(const std::string& path);

// Ground-truth CSV: image_id,class_id,x_min,y_min,x_max,y_max[,view].
void write_gt_csv(const std::string& path, const std::vector<GroundTruth>& gts);
std::vector<GroundTruth> read_gt_csv(const std::string& path);

// Dataset directory: images/<image_id>.pgm + gt.csv.
DatasetIndex load_dataset(const std::string& dir);

// Line-based `key = value` config with [section] headers. Keys are stored as
// "section.key". Unknown keys are the caller's problem; duplicate keys and
// syntax errors are hard errors here.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

  // Throws on keys outside the allowed set (catches config typos).
  void require_known(const std::vector<std::string>& known) const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace msp
