#include "msp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace msp {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts,
                             double iou_thresh, const EvalLevel& level) {
  MatchResult res;
  res.flags.assign(dets.size(), DetFlag::FP);
  res.gt_matched.assign(gts.size(), false);
  std::vector<bool> gt_valid(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double h = gts[g].height();
    gt_valid[g] = h >= level.min_height && h < level.max_height;
    if (gt_valid[g]) ++res.num_valid_gt;
  }
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
  });
  for (int d : order) {
    const std::size_t di = static_cast<std::size_t>(d);
    double best = iou_thresh;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!gt_valid[g] || res.gt_matched[g]) continue;
      const double iou = overlap(dets[di].box, gts[g].box);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      res.flags[di] = DetFlag::TP;
      res.gt_matched[static_cast<std::size_t>(best_gt)] = true;
      continue;
    }
    // Unmatched detection overlapping an ignore-region gt is neither TP nor FP.
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_valid[g]) continue;
      if (overlap(dets[di].box, gts[g].box) > iou_thresh) {
        res.flags[di] = DetFlag::Ignored;
        break;
      }
    }
  }
  return res;
}

PRCurve build_pr_curve(const std::vector<Detection>& dets,
                       const std::vector<GroundTruth>& gts,
                       const EvalLevel& level, double iou_thresh,
                       int image_count) {
  if (image_count <= 0) throw Error("build_pr_curve: image_count must be positive");
  std::map<std::string, std::vector<Detection>> dets_by_img;
  std::map<std::string, std::vector<GroundTruth>> gts_by_img;
  for (const Detection& d : dets) dets_by_img[d.image_id].push_back(d);
  for (const GroundTruth& g : gts) gts_by_img[g.image_id].push_back(g);

  PRCurve curve;
  curve.image_count = image_count;
  std::vector<std::pair<double, bool>> scored;  // (score, is_tp)
  for (const auto& [img, dl] : dets_by_img) {
    auto git = gts_by_img.find(img);
    static const std::vector<GroundTruth> empty_gts;
    const auto& gl = git == gts_by_img.end() ? empty_gts : git->second;
    MatchResult m = match_detections(dl, gl, iou_thresh, level);
    for (std::size_t i = 0; i < dl.size(); ++i) {
      if (m.flags[i] == DetFlag::Ignored) continue;
      scored.emplace_back(dl[i].score, m.flags[i] == DetFlag::TP);
    }
  }
  for (const auto& [img, gl] : gts_by_img) {
    if (dets_by_img.count(img)) continue;
    for (const GroundTruth& g : gl) {
      const double h = g.height();
      if (h >= level.min_height && h < level.max_height) ++curve.num_gt;
    }
  }
  for (const auto& [img, dl] : dets_by_img) {
    auto git = gts_by_img.find(img);
    if (git == gts_by_img.end()) continue;
    for (const GroundTruth& g : git->second) {
      const double h = g.height();
      if (h >= level.min_height && h < level.max_height) ++curve.num_gt;
    }
  }

  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  int tp = 0, fp = 0;
  for (const auto& [score, is_tp] : scored) {
    if (is_tp)
      ++tp;
    else
      ++fp;
    PRPoint p;
    p.score = score;
    p.tp = tp;
    p.fp = fp;
    p.precision = static_cast<double>(tp) / (tp + fp);
    p.recall = curve.num_gt > 0 ? static_cast<double>(tp) / curve.num_gt : 0.0;
    curve.points.push_back(p);
  }
  return curve;
}

double average_precision(const PRCurve& curve) {
  if (curve.num_gt == 0) return std::nan("");
  double ap = 0.0;
  double max_prec = 0.0;
  // Walk backwards keeping the running max precision at recall >= r.
  double prev_recall = curve.points.empty() ? 0.0 : curve.points.back().recall;
  for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
    max_prec = std::max(max_prec, it->precision);
    const double r_lo = (it + 1) != curve.points.rend() ? (it + 1)->recall : 0.0;
    ap += (prev_recall - r_lo) * max_prec;
    prev_recall = r_lo;
  }
  return ap;
}

std::array<double, 9> fppi_grid() {
  std::array<double, 9> f;
  for (int k = 0; k < 9; ++k) f[static_cast<std::size_t>(k)] = std::pow(10.0, -2.0 + k / 4.0);
  return f;
}

double average_recall(const PRCurve& curve) {
  if (curve.num_gt == 0) return std::nan("");
  const auto grid = fppi_grid();
  double acc = 0.0;
  for (double fk : grid) {
    double recall = 0.0;
    for (const PRPoint& p : curve.points) {
      const double fppi = static_cast<double>(p.fp) / curve.image_count;
      if (fppi <= fk) recall = p.recall;  // points are in decreasing-threshold order
    }
    acc += recall;
  }
  return acc / 9.0;
}

std::vector<TaskMetrics> classified_eval(
    const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
    const std::map<std::string, std::map<int, int>>& tasks,
    const EvalLevel& level, double iou_thresh, int image_count) {
  std::vector<TaskMetrics> out;

  // Class-agnostic detection metrics.
  {
    TaskMetrics tm;
    tm.task = "detection";
    tm.level = level.name;
    PRCurve c = build_pr_curve(dets, gts, level, iou_thresh, image_count);
    tm.ap = average_precision(c);
    tm.ar = average_recall(c);
    out.push_back(std::move(tm));
  }

  for (const auto& [task, mapping] : tasks) {
    TaskMetrics tm;
    tm.task = task;
    tm.level = level.name;
    std::vector<int> labels;
    for (const auto& [cid, label] : mapping)
      if (std::find(labels.begin(), labels.end(), label) == labels.end())
        labels.push_back(label);
    double ap_sum = 0, ar_sum = 0;
    int ap_n = 0, ar_n = 0;
    for (int label : labels) {
      std::vector<Detection> d;
      std::vector<GroundTruth> g;
      for (const Detection& x : dets) {
        auto it = mapping.find(x.class_id);
        if (it == mapping.end())
          throw Error("classified_eval: unknown class_id " + std::to_string(x.class_id));
        if (it->second == label) d.push_back(x);
      }
      for (const GroundTruth& x : gts) {
        auto it = mapping.find(x.class_id);
        if (it == mapping.end())
          throw Error("classified_eval: unknown class_id " + std::to_string(x.class_id));
        if (it->second == label) g.push_back(x);
      }
      PRCurve c = build_pr_curve(d, g, level, iou_thresh, image_count);
      const double ap = average_precision(c);
      const double ar = average_recall(c);
      tm.per_class_ap[label] = ap;
      tm.per_class_ar[label] = ar;
      if (!std::isnan(ap)) {
        ap_sum += ap;
        ++ap_n;
      }
      if (!std::isnan(ar)) {
        ar_sum += ar;
        ++ar_n;
      }
    }
    tm.ap = ap_n > 0 ? ap_sum / ap_n : std::nan("");
    tm.ar = ar_n > 0 ? ar_sum / ar_n : std::nan("");
    out.push_back(std::move(tm));
  }
  return out;
}

void write_pr_csv(const std::string& path, const PRCurve& curve) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "recall,precision\n";
  for (const PRPoint& p : curve.points) os << p.recall << "," << p.precision << "\n";
}

void write_metrics_csv(const std::string& path,
                       const std::vector<TaskMetrics>& metrics) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "task,level,AP,AR\n";
  for (const TaskMetrics& m : metrics)
    os << m.task << "," << m.level << "," << m.ap << "," << m.ar << "\n";
}

}  // namespace msp
