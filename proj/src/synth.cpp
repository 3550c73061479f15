#include "msp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace msp {

std::vector<unsigned char> render_object_mask(int image_w, int image_h,
                                              int class_id, const Box& box) {
  std::vector<unsigned char> mask(static_cast<std::size_t>(image_w) * image_h, 0);
  const int x0 = static_cast<int>(std::lround(box.x_min));
  const int y0 = static_cast<int>(std::lround(box.y_min));
  const int x1 = static_cast<int>(std::lround(box.x_max));
  const int y1 = static_cast<int>(std::lround(box.y_max));
  const int s = std::min(x1 - x0, y1 - y0);
  const double cx = 0.5 * (box.x_min + box.x_max);
  const double cy = 0.5 * (box.y_min + box.y_max);
  auto set = [&](int x, int y) {
    if (x >= 0 && x < image_w && y >= 0 && y < image_h)
      mask[static_cast<std::size_t>(y) * image_w + x] = 1;
  };
  switch ((class_id - 1) % 4) {
    case 0:  // filled square
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) set(x, y);
      break;
    case 1: {  // filled disk
      const double r = 0.5 * s;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (dx * dx + dy * dy <= r * r) set(x, y);
        }
      // Disks drop corner pixels; pin the bbox extremes so the rendered
      // extent matches the recorded box.
      set(x0, static_cast<int>(cy));
      set(x1 - 1, static_cast<int>(cy));
      set(static_cast<int>(cx), y0);
      set(static_cast<int>(cx), y1 - 1);
      break;
    }
    case 2: {  // plus / cross
      const int t = std::max(1, s / 3);
      const int bx = static_cast<int>(cx) - t / 2;
      const int by = static_cast<int>(cy) - t / 2;
      for (int y = by; y < by + t; ++y)
        for (int x = x0; x < x1; ++x) set(x, y);
      for (int x = bx; x < bx + t; ++x)
        for (int y = y0; y < y1; ++y) set(x, y);
      break;
    }
    default: {  // hollow square ring
      const int t = std::max(1, s / 4);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          if (y < y0 + t || y >= y1 - t || x < x0 + t || x >= x1 - t) set(x, y);
      break;
    }
  }
  return mask;
}

SynthResult generate_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.count <= 0 || cfg.classes < 1 || cfg.min_height < 2 ||
      cfg.max_height <= cfg.min_height || cfg.image_w < 32 || cfg.image_h < 32)
    throw Error("generate_synthetic: invalid config");
  fs::create_directories(fs::path(out_dir) / "images");
  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> nobj_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthResult res;
  std::vector<GroundTruth> all_gts;
  const double small_cut = 16.0;
  int hist[3] = {0, 0, 0};  // <16, 16..32, >=32

  for (int img = 0; img < cfg.count; ++img) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d", img);

    std::vector<unsigned char> pix(static_cast<std::size_t>(cfg.image_w) * cfg.image_h);
    std::uniform_int_distribution<int> bg_noise(30, 50);
    for (auto& p : pix) p = static_cast<unsigned char>(bg_noise(rng));

    // Clutter: dim rectangles that never reach object intensity.
    std::uniform_int_distribution<int> clutter_int(55, 95);
    for (int b = 0; b < cfg.clutter_blobs; ++b) {
      std::uniform_int_distribution<int> sz(3, 14);
      const int w = sz(rng), h = sz(rng);
      std::uniform_int_distribution<int> px(0, cfg.image_w - w);
      std::uniform_int_distribution<int> py(0, cfg.image_h - h);
      const int x0 = px(rng), y0 = py(rng);
      const unsigned char v = static_cast<unsigned char>(clutter_int(rng));
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
          pix[static_cast<std::size_t>(y) * cfg.image_w + x] = v;
    }

    std::vector<GroundTruth> gts;
    std::vector<Box> placed;
    const int nobj = nobj_dist(rng);
    for (int o = 0; o < nobj; ++o) {
      const bool force_small =
          res.small_objects < static_cast<int>(0.34 * (res.total_objects + 1));
      const bool small = force_small || unit(rng) < cfg.small_prob;
      int lo = static_cast<int>(cfg.min_height);
      int hi = static_cast<int>(cfg.max_height);
      if (small)
        hi = std::min(hi, static_cast<int>(small_cut) - 1);
      else
        lo = std::max(lo, static_cast<int>(small_cut));
      if (lo > hi) {  // height range excludes one regime entirely
        lo = static_cast<int>(cfg.min_height);
        hi = static_cast<int>(cfg.max_height);
      }
      std::uniform_int_distribution<int> size_dist(lo, hi);
      const int s = size_dist(rng);
      std::uniform_int_distribution<int> cls_dist(1, cfg.classes);
      const int cls = cls_dist(rng);

      Box box;
      bool ok = false;
      for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
        std::uniform_int_distribution<int> px(0, cfg.image_w - s);
        std::uniform_int_distribution<int> py(0, cfg.image_h - s);
        const int x0 = px(rng), y0 = py(rng);
        box = {static_cast<double>(x0), static_cast<double>(y0),
               static_cast<double>(x0 + s), static_cast<double>(y0 + s)};
        ok = true;
        for (const Box& other : placed)
          if (overlap(box, other) >= 0.1) {
            ok = false;
            break;
          }
      }
      if (!ok) continue;  // infeasible placement after bounded retries
      placed.push_back(box);

      const unsigned char inten =
          static_cast<unsigned char>(std::min(250, 130 + 40 * ((cls - 1) % 4)));
      const auto mask = render_object_mask(cfg.image_w, cfg.image_h, cls, box);
      for (int y = 0; y < cfg.image_h; ++y)
        for (int x = 0; x < cfg.image_w; ++x)
          if (mask[static_cast<std::size_t>(y) * cfg.image_w + x])
            pix[static_cast<std::size_t>(y) * cfg.image_w + x] = inten;

      GroundTruth gt;
      gt.image_id = name;
      gt.box = box;
      gt.class_id = cls;
      gts.push_back(gt);
      ++res.total_objects;
      if (s < small_cut) ++res.small_objects;
      hist[s < 16 ? 0 : (s < 32 ? 1 : 2)]++;
    }

    write_pgm((fs::path(out_dir) / "images" / (std::string(name) + ".pgm")).string(),
              pix, cfg.image_w, cfg.image_h);
    DatasetItem item;
    item.image_id = name;
    item.path = (fs::path(out_dir) / "images" / (std::string(name) + ".pgm")).string();
    item.gts = gts;
    res.index.items.push_back(std::move(item));
    all_gts.insert(all_gts.end(), gts.begin(), gts.end());
  }
  res.index.num_classes = cfg.classes;

  write_gt_csv((fs::path(out_dir) / "gt.csv").string(), all_gts);
  std::ofstream mf((fs::path(out_dir) / "manifest.txt").string());
  mf << "images = " << cfg.count << "\n";
  mf << "classes = " << cfg.classes << "\n";
  mf << "seed = " << cfg.seed << "\n";
  mf << "total_objects = " << res.total_objects << "\n";
  mf << "small_objects = " << res.small_objects << "\n";
  mf << "small_fraction = "
     << (res.total_objects ? static_cast<double>(res.small_objects) / res.total_objects : 0.0)
     << "\n";
  mf << "heights_lt16 = " << hist[0] << "\n";
  mf << "heights_16_31 = " << hist[1] << "\n";
  mf << "heights_ge32 = " << hist[2] << "\n";
  return res;
}

}  // namespace msp
