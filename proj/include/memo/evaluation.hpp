#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memo/maps.hpp"

namespace memo {

enum class EvalProtocol {
  Standard,   // NMS + thinning before binarization (SEval)
  Crispness,  // raw predictions binarized directly (CEval)
};

// Orientation-aware non-maximum suppression: compare each pixel against
// bilinear neighbors at +-1 px along the Sobel gradient of a sigma=1
// Gaussian-smoothed copy, then one thinning iteration to break remaining
// 2-wide ridges. Surviving values are untouched.
ProbabilityMap nms_thin(const ProbabilityMap& p);

// Fraction of above-threshold pixels that survive nms_thin; 1.0 when the
// map has no above-threshold pixel at all.
double average_crispness(const ProbabilityMap& p, float threshold = 0.5f);

struct MatchCounts {
  int64_t true_positives = 0;
  int64_t false_positives = 0;
  int64_t false_negatives = 0;
};

// Maximum-cardinality one-to-one matching between pred and gt edge pixels
// under Euclidean distance <= tol_px.
MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, double tol_px);

// 0.75% of the image diagonal.
double edge_tolerance_px(int height, int width, double fraction = 0.0075);

double f1_score(const MatchCounts& c);

// 33 thresholds evenly spaced in (0,1): k/(count+1).
std::vector<double> default_thresholds(int count = 33);

struct ThresholdPoint {
  double threshold = 0, precision = 0, recall = 0, f1 = 0;
};

struct ImageRow {
  int index = 0;
  double best_f1 = 0, best_threshold = 0, crispness = 0;
  double best_scale = 1.0;
};

struct EvalReport {
  EvalProtocol protocol = EvalProtocol::Standard;
  double ods = 0, ods_threshold = 0, ois = 0, crispness = 0;
  std::vector<ThresholdPoint> curve;
  std::vector<ImageRow> per_image;
};

EvalReport ods_ois(const std::vector<ProbabilityMap>& preds,
                   const std::vector<BinaryMap>& gts,
                   const std::vector<double>& thresholds, EvalProtocol protocol,
                   double tolerance_fraction = 0.0075, int jobs = 1);

// Per image, the best scale wins: per shared threshold for the ODS
// aggregate, per (scale, threshold) pair for OIS.
EvalReport multi_granularity_eval(
    const std::vector<std::pair<double, std::vector<ProbabilityMap>>>& per_scale,
    const std::vector<BinaryMap>& gts, const std::vector<double>& thresholds,
    EvalProtocol protocol, double tolerance_fraction = 0.0075, int jobs = 1);

void write_report_tsv(const EvalReport& report, const std::string& path);
std::string format_report_summary(const EvalReport& report);

}  // namespace memo
