// Command-line front end: synth / train / detect / eval / ablate.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "msp/eval.hpp"
#include "msp/model.hpp"
#include "msp/synth.hpp"

namespace fs = std::filesystem;
using namespace msp;

namespace {

const std::vector<std::string> kModelKeys = {
    "model.multiscale",      "model.k",
    "model.classes",         "model.rpn_mid_channels",
    "model.image_means",     "model.init_seed",
    "model.anchor_base_size", "model.anchor_scales",
    "model.anchor_ratios",   "model.backbone_widths",
    "model.backbone_blocks"};

const std::vector<std::string> kTrainKeys = {
    "train.iterations", "train.base_lr",      "train.decay_step",
    "train.decay_factor", "train.momentum",   "train.weight_decay",
    "train.seed",       "train.rpn_minibatch", "train.roi_minibatch",
    "train.pre_nms_n",  "train.post_nms_n",   "train.train_nms_iou",
    "train.log_every",  "train.w_rpn_cls",    "train.w_rpn_reg",
    "train.w_det_cls",  "train.w_det_reg"};

const std::vector<std::string> kSynthKeys = {
    "synth.count",      "synth.image_w",    "synth.image_h",
    "synth.min_objects", "synth.max_objects", "synth.min_height",
    "synth.max_height", "synth.classes",    "synth.small_prob",
    "synth.clutter_blobs", "synth.seed"};

const std::vector<std::string> kDetectKeys = {
    "detect.score_thresh", "detect.nms_iou", "detect.post_nms_n",
    "detect.proposal_nms_iou", "detect.max_detections"};

std::vector<int> to_ints(const std::vector<double>& v) {
  std::vector<int> out;
  for (double d : v) out.push_back(static_cast<int>(d));
  return out;
}

ModelConfig model_config_from(const Config& cfg) {
  ModelConfig m;
  m.multiscale = cfg.get_bool("model.multiscale", m.multiscale);
  m.head.k = cfg.get_int("model.k", m.head.k);
  m.head.num_classes = cfg.get_int("model.classes", m.head.num_classes);
  m.rpn_mid_channels = cfg.get_int("model.rpn_mid_channels", m.rpn_mid_channels);
  m.image_means = cfg.get_doubles("model.image_means", m.image_means);
  m.init_seed = static_cast<std::uint64_t>(cfg.get_int("model.init_seed", 1));
  m.anchors.base_size = cfg.get_double("model.anchor_base_size", m.anchors.base_size);
  m.anchors.scales = cfg.get_doubles("model.anchor_scales", m.anchors.scales);
  m.anchors.ratios = cfg.get_doubles("model.anchor_ratios", m.anchors.ratios);
  m.backbone.widths = to_ints(cfg.get_doubles(
      "model.backbone_widths", {16, 32, 64, 96, 128}));
  m.backbone.blocks = to_ints(cfg.get_doubles("model.backbone_blocks", {1, 1, 2, 2, 2}));
  return m;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.iterations = cfg.get_int("train.iterations", t.iterations);
  t.base_lr = cfg.get_double("train.base_lr", t.base_lr);
  t.decay_step = cfg.get_int("train.decay_step", t.decay_step);
  t.decay_factor = cfg.get_double("train.decay_factor", t.decay_factor);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));
  t.rpn_minibatch = cfg.get_int("train.rpn_minibatch", t.rpn_minibatch);
  t.roi_minibatch = cfg.get_int("train.roi_minibatch", t.roi_minibatch);
  t.pre_nms_n = cfg.get_int("train.pre_nms_n", t.pre_nms_n);
  t.post_nms_n = cfg.get_int("train.post_nms_n", t.post_nms_n);
  t.train_nms_iou = cfg.get_double("train.train_nms_iou", t.train_nms_iou);
  t.log_every = cfg.get_int("train.log_every", t.log_every);
  t.w_rpn_cls = cfg.get_double("train.w_rpn_cls", t.w_rpn_cls);
  t.w_rpn_reg = cfg.get_double("train.w_rpn_reg", t.w_rpn_reg);
  t.w_det_cls = cfg.get_double("train.w_det_cls", t.w_det_cls);
  t.w_det_reg = cfg.get_double("train.w_det_reg", t.w_det_reg);
  return t;
}

SynthConfig synth_config_from(const Config& cfg) {
  SynthConfig s;
  s.count = cfg.get_int("synth.count", s.count);
  s.image_w = cfg.get_int("synth.image_w", s.image_w);
  s.image_h = cfg.get_int("synth.image_h", s.image_h);
  s.min_objects = cfg.get_int("synth.min_objects", s.min_objects);
  s.max_objects = cfg.get_int("synth.max_objects", s.max_objects);
  s.min_height = cfg.get_double("synth.min_height", s.min_height);
  s.max_height = cfg.get_double("synth.max_height", s.max_height);
  s.classes = cfg.get_int("synth.classes", s.classes);
  s.small_prob = cfg.get_double("synth.small_prob", s.small_prob);
  s.clutter_blobs = cfg.get_int("synth.clutter_blobs", s.clutter_blobs);
  s.seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1));
  return s;
}

std::vector<std::string> all_known_keys() {
  std::vector<std::string> keys = kModelKeys;
  keys.insert(keys.end(), kTrainKeys.begin(), kTrainKeys.end());
  keys.insert(keys.end(), kSynthKeys.begin(), kSynthKeys.end());
  keys.insert(keys.end(), kDetectKeys.begin(), kDetectKeys.end());
  return keys;
}

Config load_config(const std::string& path) {
  Config cfg = Config::parse_file(path);
  cfg.require_known(all_known_keys());
  return cfg;
}

EvalLevel parse_level(const std::string& s) {
  if (s == "L1") return EvalLevel::l1();
  if (s == "L2") return EvalLevel::l2();
  if (s == "all") return {"all", 0.0, std::numeric_limits<double>::infinity()};
  if (s == "small") return {"small", 0.0, 16.0};
  // name:min_height[:max_height]
  std::stringstream ss(s);
  std::string name, lo, hi;
  if (!std::getline(ss, name, ':') || !std::getline(ss, lo, ':'))
    throw Error("bad --level '" + s + "' (use L1, L2, all, small or name:min[:max])");
  EvalLevel lvl{name, std::stod(lo), std::numeric_limits<double>::infinity()};
  if (std::getline(ss, hi, ':')) lvl.max_height = std::stod(hi);
  return lvl;
}

std::vector<Detection> run_detect_dir(const Detector& model, const std::string& dir,
                                      double score_thresh, double nms_iou,
                                      int post_nms_n, double proposal_nms_iou,
                                      int max_detections) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm"))
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Detection> all;
  for (const fs::path& f : files) {
    Tensor img = load_pnm(f.string(), model.config().image_means);
    auto dets = model.detect(img, f.stem().string(), score_thresh, nms_iou,
                             post_nms_n, proposal_nms_iou, max_detections);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  return all;
}

struct ExperimentMetrics {
  double ap_all = 0, ar_all = 0, ap_small = 0;
};

ExperimentMetrics evaluate_detections(const std::vector<Detection>& dets,
                                      const std::vector<GroundTruth>& gts,
                                      int image_count) {
  ExperimentMetrics m;
  EvalLevel all{"all", 0.0, std::numeric_limits<double>::infinity()};
  EvalLevel small{"small", 0.0, 16.0};
  PRCurve ca = build_pr_curve(dets, gts, all, 0.5, image_count);
  PRCurve cs = build_pr_curve(dets, gts, small, 0.5, image_count);
  m.ap_all = average_precision(ca);
  m.ar_all = average_recall(ca);
  m.ap_small = average_precision(cs);
  return m;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              int count_override, int seed_override) {
  SynthConfig sc;
  if (!config_path.empty()) sc = synth_config_from(load_config(config_path));
  if (count_override > 0) sc.count = count_override;
  if (seed_override >= 0) sc.seed = static_cast<std::uint64_t>(seed_override);
  SynthResult res = generate_synthetic(sc, out_dir);
  std::cout << "wrote " << res.index.items.size() << " images, "
            << res.total_objects << " objects (" << res.small_objects
            << " small) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  Config cfg = load_config(config_path);
  ModelConfig mc = model_config_from(cfg);
  TrainConfig tc = train_config_from(cfg);
  DatasetIndex data = load_dataset(data_dir);
  Detector model(mc);
  TrainResult res = train(model, data, tc);
  fs::create_directories(out_dir);
  save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), model, cfg.entries());
  write_loss_log((fs::path(out_dir) / "loss_log.csv").string(), res.log);
  std::cout << "trained " << tc.iterations << " iterations; final loss "
            << (res.log.empty() ? 0.0 : res.log.back().total) << "\n";
  return 0;
}

int cmd_detect(const std::string& ckpt_path, const std::string& input,
               const std::string& out_csv, double score_thresh, double nms_iou) {
  Detector model = load_checkpoint(ckpt_path);
  std::vector<Detection> dets;
  if (fs::is_directory(input)) {
    dets = run_detect_dir(model, input, score_thresh, nms_iou, 300, 0.5, 100);
  } else {
    Tensor img = load_pnm(input, model.config().image_means);
    dets = model.detect(img, fs::path(input).stem().string(), score_thresh,
                        nms_iou, 300, 0.5, 100);
  }
  write_detections_csv(out_csv, dets);
  std::cout << "wrote " << dets.size() << " detections to " << out_csv << "\n";
  return 0;
}

int cmd_eval(const std::string& det_csv, const std::string& gt_csv,
             const std::string& level_str, int image_count,
             const std::string& out_prefix) {
  std::vector<Detection> dets = read_detections_csv(det_csv);
  std::vector<GroundTruth> gts = read_gt_csv(gt_csv);
  EvalLevel level = parse_level(level_str);
  if (image_count <= 0) {
    std::set<std::string> ids;
    for (const auto& d : dets) ids.insert(d.image_id);
    for (const auto& g : gts) ids.insert(g.image_id);
    image_count = static_cast<int>(ids.size());
    if (image_count == 0) image_count = 1;
  }
  std::map<int, int> identity;
  for (const auto& g : gts) identity[g.class_id] = g.class_id;
  for (const auto& d : dets) identity[d.class_id] = d.class_id;
  std::map<std::string, std::map<int, int>> tasks{{"classification", identity}};
  auto metrics = classified_eval(dets, gts, tasks, level, 0.5, image_count);
  for (const TaskMetrics& m : metrics) {
    std::printf("task=%s level=%s AP=%.6f AR=%.6f\n", m.task.c_str(),
                m.level.c_str(), m.ap, m.ar);
    for (const auto& [cls, ap] : m.per_class_ap)
      std::printf("  class=%d AP=%.6f AR=%.6f\n", cls, ap, m.per_class_ar.at(cls));
  }
  if (!out_prefix.empty()) {
    write_metrics_csv(out_prefix + "_metrics.csv", metrics);
    PRCurve curve = build_pr_curve(dets, gts, level, 0.5, image_count);
    write_pr_csv(out_prefix + "_pr.csv", curve);
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& train_dir,
               const std::string& test_dir, const std::string& out_dir) {
  Config cfg = load_config(config_path);
  TrainConfig tc = train_config_from(cfg);
  DatasetIndex train_data = load_dataset(train_dir);
  DatasetIndex test_data = load_dataset(test_dir);
  std::vector<GroundTruth> test_gts;
  for (const auto& item : test_data.items)
    test_gts.insert(test_gts.end(), item.gts.begin(), item.gts.end());
  const int n_test = static_cast<int>(test_data.items.size());
  fs::create_directories(out_dir);

  const double score_thresh = cfg.get_double("detect.score_thresh", 0.05);
  const double nms_iou = cfg.get_double("detect.nms_iou", 0.3);

  ExperimentMetrics em[2];
  const char* names[2] = {"fused", "single_scale"};
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig mc = model_config_from(cfg);
    mc.multiscale = (variant == 0);
    Detector model(mc);
    TrainResult res = train(model, train_data, tc);
    const fs::path base = fs::path(out_dir) / names[variant];
    save_checkpoint(base.string() + ".ckpt", model, cfg.entries());
    write_loss_log(base.string() + "_loss.csv", res.log);
    std::vector<Detection> dets;
    for (const auto& item : test_data.items) {
      Tensor img = load_pnm(item.path, mc.image_means);
      auto d = model.detect(img, item.image_id, score_thresh, nms_iou, 300, 0.5, 100);
      dets.insert(dets.end(), d.begin(), d.end());
    }
    write_detections_csv(base.string() + "_dets.csv", dets);
    em[variant] = evaluate_detections(dets, test_gts, n_test);
  }

  std::printf("%-14s %10s %10s %10s\n", "model", "AP_all", "AR_all", "AP_small");
  for (int v = 0; v < 2; ++v)
    std::printf("%-14s %10.4f %10.4f %10.4f\n", names[v], em[v].ap_all,
                em[v].ar_all, em[v].ap_small);
  std::printf("%-14s %10.4f %10s %10.4f\n", "delta",
              em[0].ap_all - em[1].ap_all, "-", em[0].ap_small - em[1].ap_small);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads();
  CLI::App app{"Two-stage multi-scale detector: synth / train / detect / eval / ablate"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", data_dir, ckpt, input, out_csv;
  std::string det_csv, gt_csv, level_str = "all", out_prefix, test_dir;
  int count_override = 0, seed_override = -1, image_count = 0;
  double score_thresh = 0.5, nms_iou = 0.3;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--config", config_path, "Config file ([synth] section)");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--count", count_override, "Override image count");
  synth_cmd->add_option("--seed", seed_override, "Override RNG seed");

  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("--config", config_path, "Config file")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* detect_cmd = app.add_subcommand("detect", "Run inference");
  detect_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  detect_cmd->add_option("--input", input, "Image file or directory")->required();
  detect_cmd->add_option("--out", out_csv, "Detection CSV path")->required();
  detect_cmd->add_option("--score-thresh", score_thresh, "Score threshold");
  detect_cmd->add_option("--nms-iou", nms_iou, "Per-class NMS IoU");

  auto* eval_cmd = app.add_subcommand("eval", "Score detections against ground truth");
  eval_cmd->add_option("--dets", det_csv, "Detection CSV")->required();
  eval_cmd->add_option("--gt", gt_csv, "Ground-truth CSV")->required();
  eval_cmd->add_option("--level", level_str, "L1, L2, all, small or name:min[:max]");
  eval_cmd->add_option("--images", image_count, "Image count for FPPI (default: ids seen)");
  eval_cmd->add_option("--out-prefix", out_prefix, "Prefix for metrics/PR CSV output");

  auto* ablate_cmd = app.add_subcommand("ablate", "Fused vs single-scale comparison");
  ablate_cmd->add_option("--config", config_path, "Config file")->required();
  ablate_cmd->add_option("--train-data", data_dir, "Training dataset dir")->required();
  ablate_cmd->add_option("--test-data", test_dir, "Test dataset dir")->required();
  ablate_cmd->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(config_path, out_dir, count_override, seed_override);
    if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (detect_cmd->parsed())
      return cmd_detect(ckpt, input, out_csv, score_thresh, nms_iou);
    if (eval_cmd->parsed())
      return cmd_eval(det_csv, gt_csv, level_str, image_count, out_prefix);
    if (ablate_cmd->parsed())
      return cmd_ablate(config_path, data_dir, test_dir, out_dir);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
