#pragma once

#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "msp/data.hpp"

namespace msp {

// Ground truth with height outside [min_height, max_height) is an ignore
// region: detections matched to it are dropped from scoring and it never
// counts toward recall's denominator.
struct EvalLevel {
  std::string name = "L2";
  double min_height = 25.0;
  double max_height = std::numeric_limits<double>::infinity();
  static EvalLevel l1() { return {"L1", 70.0, std::numeric_limits<double>::infinity()}; }
  static EvalLevel l2() { return {"L2", 25.0, std::numeric_limits<double>::infinity()}; }
};

enum class DetFlag { TP, FP, Ignored };

struct MatchResult {
  std::vector<DetFlag> flags;   // one per detection, in the order given
  std::vector<bool> gt_matched; // one per gt (false for ignored gts)
  int num_valid_gt = 0;
};

// Greedy single-image matching: detections by descending score, each matched
// to the highest-overlap unmatched valid gt with overlap > iou_thresh.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& gts,
                             double iou_thresh, const EvalLevel& level);

struct PRPoint {
  double score = 0, precision = 0, recall = 0;
  int tp = 0, fp = 0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // one per scored detection, descending score
  int num_gt = 0;
  int image_count = 0;
};

// Multi-image curve; detections and gts are matched per image.
PRCurve build_pr_curve(const std::vector<Detection>& dets,
                       const std::vector<GroundTruth>& gts,
                       const EvalLevel& level, double iou_thresh,
                       int image_count);

// All-points interpolation: sum of recall increments times the max precision
// at recall >= r. NaN when the level contains no ground truth.
double average_precision(const PRCurve& curve);

// Mean recall over the 9 log-spaced FPPI points 10^(-2 + k/4), k = 0..8,
// taking at each point the operating threshold with the largest FPPI <= f_k.
double average_recall(const PRCurve& curve);
std::array<double, 9> fppi_grid();

struct TaskMetrics {
  std::string task;
  std::string level;
  double ap = 0, ar = 0;
  std::map<int, double> per_class_ap, per_class_ar;
};

// Detection metrics (class-agnostic) plus per-class macro-averaged
// classification metrics for each named task (label per class id).
std::vector<TaskMetrics> classified_eval(
    const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
    const std::map<std::string, std::map<int, int>>& tasks,
    const EvalLevel& level, double iou_thresh, int image_count);

void write_pr_csv(const std::string& path, const PRCurve& curve);
void write_metrics_csv(const std::string& path,
                       const std::vector<TaskMetrics>& metrics);

}  // namespace msp
