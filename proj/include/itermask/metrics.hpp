#pragma once

#include <optional>
#include <string>
#include <vector>

#include "itermask/volume.hpp"

namespace itermask {

struct DetectionSample {
  int label = 0; ///< 0 normal, 1 anomalous
  double score = 0.0;
};

/// Number of set voxels in the final mask.
double anomaly_score_mask(const Mask &mask);
/// Mean error over brain voxels (score used by reconstruction baselines).
double anomaly_score_error(const Volume &e, const BrainMask &brain);

struct DetectionReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double fpr80 = 0.0;
  double fpr90 = 0.0;
  double fnr80 = 0.0;
  double fnr90 = 0.0;
};

/// One operating point per distinct score, thresholds descending; a sample
/// is called positive when score >= threshold.
struct RocPoint {
  double threshold;
  double tpr;
  double fpr;
  double precision;
};
std::vector<RocPoint> roc_curve(const std::vector<DetectionSample> &samples);

/// AUROC by trapezoids over the tie-grouped ROC (equal to the Mann-Whitney
/// statistic with half credit for ties); AUPRC as step-wise average
/// precision; FPR/FNR at the first operating point reaching the TPR target.
DetectionReport roc_pr(const std::vector<DetectionSample> &samples);

struct OperatingPoint {
  double fpr;
  double fnr;
};
OperatingPoint at_tpr(const std::vector<DetectionSample> &samples, double target_tpr);

struct OverlapReport {
  double dsc = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
  double jaccard = 0.0;
  std::vector<std::string> flags;
};

/// Confusion-count overlap. Both-empty gives 1 everywhere with a flag;
/// a ratio with a zero denominator otherwise is reported as 0 and flagged.
OverlapReport overlap_metrics(const Mask &prediction, const Mask &truth);

/// Surface voxels: set voxels with at least one 6-connected unset (or
/// out-of-grid) neighbor.
Mask surface(const Mask &m);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// set voxel of `m`; +inf when `m` is empty.
std::vector<double> squared_distance_transform(const Mask &m, const Spacing &spacing);

/// Average symmetric surface distance in mm. Throws if either mask is empty.
double assd(const Mask &prediction, const Mask &truth, const Spacing &spacing);

struct PsnrResult {
  double value_db = 0.0;
  bool infinite = false; ///< zero MSE
};

/// 10 log10(peak^2 / MSE) over `region`, peak = max - min of x in the region.
PsnrResult psnr_region(const Volume &x, const Volume &x_pred, const Mask &region);

} // namespace itermask
