#pragma once

#include <string>
#include <vector>

#include "msp/anchors.hpp"
#include "msp/backbone.hpp"
#include "msp/data.hpp"
#include "msp/rfcn_head.hpp"
#include "msp/rpn.hpp"

namespace msp {

struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  HeadConfig head;
  bool multiscale = true;  // false: single-scale C5 ablation
  int rpn_mid_channels = 64;
  std::vector<double> image_means{0.25};
  std::uint64_t init_seed = 1;
};

struct TrainConfig {
  int iterations = 5000;
  double base_lr = 1e-3;
  int decay_step = 2000;
  double decay_factor = 0.5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double w_rpn_cls = 1.0, w_rpn_reg = 1.0, w_det_cls = 1.0, w_det_reg = 1.0;
  std::uint64_t seed = 1;
  int rpn_minibatch = 256;
  int roi_minibatch = 128;
  int pre_nms_n = 2000, post_nms_n = 300;
  double train_nms_iou = 0.7;
  int log_every = 1;
};

struct LossRow {
  int iter = 0;
  double rpn_cls = 0, rpn_reg = 0, det_cls = 0, det_reg = 0, total = 0, lr = 0;
};

// The assembled two-stage detector: backbone + multi-scale RPN with
// additive fusion + cross-layer position-sensitive pooling head.
class Detector {
 public:
  explicit Detector(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  struct ForwardState {
    PaddedImage padded;
    FeaturePyramid pyramid;
    RpnPrediction fused;          // stride 4 (fused) or 16 (single-scale)
    std::vector<PsroiLevelMaps> cls_maps;
    std::vector<PsroiLevelMaps> reg_maps;
    std::vector<Box> anchors;
  };

  // Runs backbone, RPN heads + fusion, and the score-map convolutions.
  ForwardState forward_base(const Tensor& image, Tape* tape = nullptr) const;

  std::vector<Detection> detect(const Tensor& image, const std::string& image_id,
                                double score_thresh = 0.5,
                                double nms_iou = 0.3,
                                int post_nms_n = 300,
                                double proposal_nms_iou = 0.5,
                                int max_detections = 100) const;

 private:
  ModelConfig cfg_;
  ModelParams params_;
  Backbone backbone_;
  PredictionHead rpn3_, rpn4_, rpn5_;
  DeconvLayer up54_obj_, up54_box_, up43_obj_, up43_box_;
  ConvLayer cls3_, cls4_, cls5_, reg3_, reg4_, reg5_;
};

struct TrainResult {
  std::vector<LossRow> log;
};

TrainResult train(Detector& model, const DatasetIndex& dataset,
                  const TrainConfig& cfg);

void write_loss_log(const std::string& path, const std::vector<LossRow>& log);

// Checkpoint: text manifest (model/config echo + parameter table), a "---"
// separator line, then one MSPT blob per parameter in manifest order.
void save_checkpoint(const std::string& path, const Detector& model,
                     const std::map<std::string, std::string>& config_echo);
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> config_echo;
};
// Rebuilds the model from the manifest and loads the weights.
Detector load_checkpoint(const std::string& path,
                         std::map<std::string, std::string>* config_echo = nullptr);

}  // namespace msp
