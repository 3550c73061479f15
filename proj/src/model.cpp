#include "msp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace msp {

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (double d : parse_doubles(s)) out.push_back(static_cast<int>(d));
  return out;
}

}  // namespace

Detector::Detector(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.init_seed);
  cfg_.backbone.in_channels = static_cast<int>(cfg.image_means.size());
  backbone_ = Backbone(cfg_.backbone, params_, rng);
  const int A = cfg_.anchors.per_cell();
  const int mid = cfg_.rpn_mid_channels;
  const auto& w = cfg_.backbone.widths;
  rpn5_ = PredictionHead(params_, "rpn.p5", w[4], mid, 2 * A, 4 * A, rng);
  cls5_ = ConvLayer(params_, "head.cls5", w[4], cfg_.head.cls_channels(), 1, 1, 0, 1, rng, 0.01);
  reg5_ = ConvLayer(params_, "head.reg5", w[4], cfg_.head.reg_channels(), 1, 1, 0, 1, rng, 0.01);
  if (cfg_.multiscale) {
    rpn4_ = PredictionHead(params_, "rpn.p4", w[3], mid, 2 * A, 4 * A, rng);
    rpn3_ = PredictionHead(params_, "rpn.p3", w[2], mid, 2 * A, 4 * A, rng);
    up54_obj_ = DeconvLayer(params_, "rpn.up54.obj", 2 * A, 2);
    up54_box_ = DeconvLayer(params_, "rpn.up54.box", 4 * A, 2);
    up43_obj_ = DeconvLayer(params_, "rpn.up43.obj", 2 * A, 2);
    up43_box_ = DeconvLayer(params_, "rpn.up43.box", 4 * A, 2);
    cls4_ = ConvLayer(params_, "head.cls4", w[3], cfg_.head.cls_channels(), 1, 1, 0, 1, rng, 0.01);
    reg4_ = ConvLayer(params_, "head.reg4", w[3], cfg_.head.reg_channels(), 1, 1, 0, 1, rng, 0.01);
    cls3_ = ConvLayer(params_, "head.cls3", w[2], cfg_.head.cls_channels(), 1, 1, 0, 1, rng, 0.01);
    reg3_ = ConvLayer(params_, "head.reg3", w[2], cfg_.head.reg_channels(), 1, 1, 0, 1, rng, 0.01);
  }
}

Detector::ForwardState Detector::forward_base(const Tensor& image, Tape* tape) const {
  ForwardState st;
  st.padded = pad_to_stride(image, 16);
  st.pyramid = backbone_.forward(st.padded.tensor, tape);

  auto [o5, b5] = rpn5_.forward(st.pyramid.n5, tape);
  RpnPrediction p5{o5, b5, 16};

  if (cfg_.multiscale) {
    auto [o4, b4] = rpn4_.forward(st.pyramid.n4, tape);
    auto [o3, b3] = rpn3_.forward(st.pyramid.n3, tape);
    RpnPrediction p4{o4, b4, 8};
    RpnPrediction p3{o3, b3, 4};
    RpnPrediction p54 = fuse_predictions(p5, p4, up54_obj_, up54_box_, tape);
    st.fused = fuse_predictions(p54, p3, up43_obj_, up43_box_, tape);
    st.cls_maps = {{cls3_.forward(st.pyramid.n3, tape), 4},
                   {cls4_.forward(st.pyramid.n4, tape), 8},
                   {cls5_.forward(st.pyramid.n5, tape), 16}};
    st.reg_maps = {{reg3_.forward(st.pyramid.n3, tape), 4},
                   {reg4_.forward(st.pyramid.n4, tape), 8},
                   {reg5_.forward(st.pyramid.n5, tape), 16}};
  } else {
    st.fused = p5;
    st.cls_maps = {{cls5_.forward(st.pyramid.n5, tape), 16}};
    st.reg_maps = {{reg5_.forward(st.pyramid.n5, tape), 16}};
  }
  const Shape& fs = st.fused.objectness.shape();
  st.anchors = generate_anchors(static_cast<int>(fs.h), static_cast<int>(fs.w),
                                st.fused.stride, cfg_.anchors);
  return st;
}

std::vector<Detection> Detector::detect(const Tensor& image,
                                        const std::string& image_id,
                                        double score_thresh, double nms_iou,
                                        int post_nms_n, double proposal_nms_iou,
                                        int max_detections) const {
  ForwardState st = forward_base(image, nullptr);
  const Shape& ps = st.padded.tensor.shape();
  std::vector<Proposal> proposals =
      decode_proposals(st.fused, st.anchors, cfg_.anchors.per_cell(),
                       static_cast<double>(ps.w), static_cast<double>(ps.h), 2000,
                       post_nms_n, proposal_nms_iou);
  if (proposals.empty()) return {};

  std::vector<Box> roi_boxes;
  roi_boxes.reserve(proposals.size());
  for (const Proposal& p : proposals) roi_boxes.push_back(p.box);
  const int C = cfg_.head.num_classes;
  Tensor pooled_cls = psroi_pool(st.cls_maps, roi_boxes, cfg_.head.k, C + 1);
  Tensor pooled_reg = psroi_pool(st.reg_maps, roi_boxes, cfg_.head.k, 4);
  Tensor reg_votes = spatial_mean(pooled_reg);

  const double ow = static_cast<double>(st.padded.orig_w);
  const double oh = static_cast<double>(st.padded.orig_h);
  std::vector<Detection> candidates;
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    const auto probs = vote_and_classify(pooled_cls, static_cast<std::int64_t>(r));
    std::array<double, 4> d;
    for (int t = 0; t < 4; ++t)
      d[static_cast<std::size_t>(t)] = reg_votes.data()[r * 4 + static_cast<std::size_t>(t)];
    Box refined = clip_box(decode_box(roi_boxes[r], d), ow, oh);
    if (refined.width() <= 0.0 || refined.height() <= 0.0) continue;
    for (int c = 1; c <= C; ++c) {
      const double score = probs[static_cast<std::size_t>(c)];
      if (score < score_thresh) continue;
      Detection det;
      det.image_id = image_id;
      det.box = refined;
      det.class_id = c;
      det.score = score;
      candidates.push_back(det);
    }
  }

  std::vector<Detection> out;
  for (int c = 1; c <= C; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].class_id != c) continue;
      boxes.push_back(candidates[i].box);
      scores.push_back(candidates[i].score);
      src.push_back(i);
    }
    for (int k : nms(boxes, scores, nms_iou))
      out.push_back(candidates[src[static_cast<std::size_t>(k)]]);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > max_detections)
    out.resize(static_cast<std::size_t>(max_detections));
  return out;
}

TrainResult train(Detector& model, const DatasetIndex& dataset,
                  const TrainConfig& cfg) {
  if (dataset.items.empty()) throw Error("train: empty dataset");
  Rng rng(cfg.seed);
  SgdOptimizer opt;
  TrainResult result;

  // Preload the images once; they are small.
  std::vector<Tensor> images;
  images.reserve(dataset.items.size());
  for (const DatasetItem& item : dataset.items)
    images.push_back(load_pnm(item.path, model.config().image_means));

  const int A = model.config().anchors.per_cell();
  const int C = model.config().head.num_classes;
  const int k = model.config().head.k;

  std::vector<std::size_t> order(dataset.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // triggers shuffle on first iteration

  Tape tape;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t idx = order[cursor++];
    const DatasetItem& item = dataset.items[idx];
    const double lr =
        cfg.base_lr * std::pow(cfg.decay_factor, iter / std::max(1, cfg.decay_step));

    Detector::ForwardState st = model.forward_base(images[idx], &tape);
    const Shape& fs = st.fused.objectness.shape();
    const std::int64_t H = fs.h, W = fs.w;
    const Shape& ps = st.padded.tensor.shape();

    std::vector<Box> gt_boxes;
    std::vector<int> gt_classes;
    for (const GroundTruth& g : item.gts) {
      gt_boxes.push_back(g.box);
      gt_classes.push_back(g.class_id);
    }

    // --- RPN losses ---
    RpnTargets rt = assign_rpn_targets(st.anchors, gt_boxes, &rng, cfg.rpn_minibatch);
    Tensor rpn_cls = Tensor::scalar(0.0), rpn_reg = Tensor::scalar(0.0);
    if (!rt.sampled.empty()) {
      std::vector<std::int64_t> cls_idx;
      std::vector<int> cls_labels;
      std::vector<std::int64_t> reg_idx;
      std::vector<std::array<double, 4>> reg_targets;
      for (int ai : rt.sampled) {
        const int a = ai % A;
        const std::int64_t cell = ai / A;
        const std::int64_t x = cell % W, y = cell / W;
        cls_idx.push_back(((2 * a) * H + y) * W + x);
        cls_idx.push_back(((2 * a + 1) * H + y) * W + x);
        cls_labels.push_back(rt.labels[static_cast<std::size_t>(ai)] == 1 ? 1 : 0);
        if (rt.labels[static_cast<std::size_t>(ai)] == 1) {
          for (int t = 0; t < 4; ++t)
            reg_idx.push_back(((4 * a + t) * H + y) * W + x);
          reg_targets.push_back(rt.deltas[static_cast<std::size_t>(ai)]);
        }
      }
      Tensor logits = gather(st.fused.objectness, cls_idx,
                             Shape{static_cast<std::int64_t>(cls_labels.size()), 2, 1, 1},
                             &tape);
      rpn_cls = softmax_xent(logits, cls_labels, &tape);
      if (!reg_targets.empty()) {
        const std::int64_t P = static_cast<std::int64_t>(reg_targets.size());
        Tensor pred = gather(st.fused.box_deltas, reg_idx, Shape{P, 4, 1, 1}, &tape);
        Tensor target(Shape{P, 4, 1, 1});
        for (std::int64_t i = 0; i < P; ++i)
          for (int t = 0; t < 4; ++t)
            target.data()[i * 4 + t] = reg_targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        rpn_reg = smooth_l1_loss(pred, target, std::vector<double>(static_cast<std::size_t>(P), 1.0),
                                 static_cast<double>(P), &tape);
      }
    }

    // --- Detection losses ---
    std::vector<Proposal> proposals = decode_proposals(
        st.fused, st.anchors, A, static_cast<double>(ps.w), static_cast<double>(ps.h),
        cfg.pre_nms_n, cfg.post_nms_n, cfg.train_nms_iou);
    std::vector<Box> rois;
    for (const Proposal& p : proposals) rois.push_back(p.box);
    // Ground-truth boxes join the RoI pool so the head always sees positives.
    for (const Box& g : gt_boxes) rois.push_back(g);

    RoiTargets rtg = assign_roi_targets(rois, gt_boxes, gt_classes, &rng, cfg.roi_minibatch);
    Tensor det_cls = Tensor::scalar(0.0), det_reg = Tensor::scalar(0.0);
    if (!rtg.roi_indices.empty()) {
      std::vector<Box> batch_rois;
      for (int ri : rtg.roi_indices) batch_rois.push_back(rois[static_cast<std::size_t>(ri)]);
      Tensor pooled_cls = psroi_pool(st.cls_maps, batch_rois, k, C + 1, &tape);
      Tensor votes = spatial_mean(pooled_cls, &tape);
      det_cls = softmax_xent(votes, rtg.labels, &tape);

      Tensor pooled_reg = psroi_pool(st.reg_maps, batch_rois, k, 4, &tape);
      Tensor reg_votes = spatial_mean(pooled_reg, &tape);
      const std::int64_t R = static_cast<std::int64_t>(batch_rois.size());
      Tensor target(Shape{R, 4, 1, 1});
      std::vector<double> row_w(static_cast<std::size_t>(R), 0.0);
      for (std::int64_t i = 0; i < R; ++i) {
        for (int t = 0; t < 4; ++t)
          target.data()[i * 4 + t] = rtg.reg_targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        if (i < rtg.num_pos) row_w[static_cast<std::size_t>(i)] = 1.0;
      }
      if (rtg.num_pos > 0)
        det_reg = smooth_l1_loss(reg_votes, target, row_w,
                                 static_cast<double>(rtg.num_pos), &tape);
    }

    Tensor total = scaled_sum({rpn_cls, rpn_reg, det_cls, det_reg},
                              {cfg.w_rpn_cls, cfg.w_rpn_reg, cfg.w_det_cls, cfg.w_det_reg},
                              &tape);
    if (!std::isfinite(total.value()))
      throw Error("train: NaN/Inf loss at iteration " + std::to_string(iter));

    if (total.requires_grad()) tape.backward(total);
    opt.step(model.params(), lr, cfg.momentum, cfg.weight_decay);
    tape.clear();

    if (iter % cfg.log_every == 0 || iter == cfg.iterations - 1) {
      LossRow row;
      row.iter = iter;
      row.rpn_cls = rpn_cls.value();
      row.rpn_reg = rpn_reg.value();
      row.det_cls = det_cls.value();
      row.det_reg = det_reg.value();
      row.total = total.value();
      row.lr = lr;
      result.log.push_back(row);
    }
  }
  return result;
}

void write_loss_log(const std::string& path, const std::vector<LossRow>& log) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "iter,rpn_cls,rpn_reg,det_cls,det_reg,total,lr\n";
  os.precision(17);
  for (const LossRow& r : log)
    os << r.iter << "," << r.rpn_cls << "," << r.rpn_reg << "," << r.det_cls << ","
       << r.det_reg << "," << r.total << "," << r.lr << "\n";
}

void save_checkpoint(const std::string& path, const Detector& model,
                     const std::map<std::string, std::string>& config_echo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path);
  const ModelConfig& c = model.config();
  os << "MSP-CHECKPOINT v1\n";
  os << "model multiscale = " << (c.multiscale ? "true" : "false") << "\n";
  os << "model k = " << c.head.k << "\n";
  os << "model classes = " << c.head.num_classes << "\n";
  os << "model rpn_mid_channels = " << c.rpn_mid_channels << "\n";
  os << "model image_means = " << join_doubles(c.image_means) << "\n";
  os << "model init_seed = " << c.init_seed << "\n";
  os << "model anchor_base_size = " << c.anchors.base_size << "\n";
  os << "model anchor_scales = " << join_doubles(c.anchors.scales) << "\n";
  os << "model anchor_ratios = " << join_doubles(c.anchors.ratios) << "\n";
  os << "model backbone_widths = " << join_ints(c.backbone.widths) << "\n";
  os << "model backbone_blocks = " << join_ints(c.backbone.blocks) << "\n";
  for (const auto& [key, val] : config_echo) os << "config " << key << " = " << val << "\n";
  for (const auto& [name, t] : model.params().all()) {
    const Shape& s = t.shape();
    os << "param " << name << " " << s.n << " " << s.c << " " << s.h << " " << s.w << "\n";
  }
  os << "---\n";
  for (const auto& [name, t] : model.params().all()) write_mspt(os, t);
}

Detector load_checkpoint(const std::string& path,
                         std::map<std::string, std::string>* config_echo) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(is, line) || line != "MSP-CHECKPOINT v1")
    throw DataError("checkpoint: bad header in " + path);
  ModelConfig cfg;
  std::vector<std::pair<std::string, Shape>> manifest;
  while (std::getline(is, line)) {
    if (line == "---") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "model") {
      std::string key, eq, val;
      ls >> key >> eq;
      std::getline(ls, val);
      if (!val.empty() && val.front() == ' ') val.erase(0, 1);
      if (key == "multiscale") cfg.multiscale = (val == "true");
      else if (key == "k") cfg.head.k = std::stoi(val);
      else if (key == "classes") cfg.head.num_classes = std::stoi(val);
      else if (key == "rpn_mid_channels") cfg.rpn_mid_channels = std::stoi(val);
      else if (key == "image_means") cfg.image_means = parse_doubles(val);
      else if (key == "init_seed") cfg.init_seed = std::stoull(val);
      else if (key == "anchor_base_size") cfg.anchors.base_size = std::stod(val);
      else if (key == "anchor_scales") cfg.anchors.scales = parse_doubles(val);
      else if (key == "anchor_ratios") cfg.anchors.ratios = parse_doubles(val);
      else if (key == "backbone_widths") cfg.backbone.widths = parse_ints(val);
      else if (key == "backbone_blocks") cfg.backbone.blocks = parse_ints(val);
      else throw DataError("checkpoint: unknown model key " + key);
    } else if (kind == "config") {
      std::string key, eq, val;
      ls >> key >> eq;
      std::getline(ls, val);
      if (!val.empty() && val.front() == ' ') val.erase(0, 1);
      if (config_echo) (*config_echo)[key] = val;
    } else if (kind == "param") {
      std::string name;
      Shape s;
      ls >> name >> s.n >> s.c >> s.h >> s.w;
      manifest.emplace_back(name, s);
    } else {
      throw DataError("checkpoint: bad manifest line '" + line + "'");
    }
  }
  Detector model(cfg);
  for (const auto& [name, shape] : manifest) {
    Tensor blob = read_mspt(is);
    if (!model.params().contains(name))
      throw DataError("checkpoint: unexpected parameter " + name);
    Tensor& dst = model.params().at(name);
    if (!(dst.shape() == shape) || !(blob.shape() == shape))
      throw DataError("checkpoint: shape mismatch for " + name);
    std::copy(blob.data(), blob.data() + blob.size(), dst.data());
  }
  return model;
}

}  // namespace msp
