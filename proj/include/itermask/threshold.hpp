#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "itermask/reconstruct.hpp"
#include "itermask/volume.hpp"

namespace itermask {

/// Thrown by fit_tangent for constant samples a tangent cannot reproduce.
class DegenerateFitError : public Error {
public:
  using Error::Error;
};

struct ThresholdSample {
  int t = 0;
  double tau = 0.0;
};

struct TangentFit {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
  std::size_t window = 0; ///< number of leading samples fitted and scored
};

enum class StopMethod { TangentFit, DiscreteDerivative };
std::string to_string(StopMethod m);

struct StopSelection {
  double tau_stop = 0.0;
  StopMethod method_used = StopMethod::TangentFit;
  int stop_t = 0;
  /// True when no iteration crossed gamma and the last sampled tau was used.
  bool no_crossing = false;
  std::optional<TangentFit> fit;
};

struct ThresholdCurve {
  std::vector<ThresholdSample> samples;
  std::vector<double> dice_trace; ///< only when a ground truth is supplied
  double gamma = 0.0;
  StopSelection selection;
};

inline constexpr double kScanShrinkFraction = 0.01;
inline constexpr std::size_t kFitWindow = 80;
inline constexpr std::size_t kMinFitSamples = 5;
inline constexpr double kMinRSquared = 0.85;
inline constexpr int kDerivativeSmoothingWindow = 5;
inline constexpr double kGammaDetection = 0.01;
inline constexpr double kGammaSegmentation = 0.05;

struct ScanOptions {
  std::uint64_t seed = 0;
  /// Optional truth mask; when set, Dice of each intermediate mask is recorded.
  const Mask *truth = nullptr;
  std::vector<double> *dice_out = nullptr;
};

/// Runs the refinement loop at a fixed shrink rate: every iteration unmasks the
/// k = ceil(0.01 |brain|) masked voxels with smallest error (ties by voxel
/// index) and records the k-th smallest error as tau(t), until the mask is
/// empty.
std::vector<ThresholdSample> scan_thresholds(const Volume &x, const BrainMask &brain,
                                             const ReconstructorKind &kind, const Volume &guidance,
                                             const ScanOptions &opts);

/// Least-squares fit of tau(t) = a tan(b t) over the first min(80, n)
/// samples. a is solved in closed form for each b; b is found by a grid
/// bracket followed by golden-section search on (0, pi / (2 t_max)).
TangentFit fit_tangent(const std::vector<ThresholdSample> &samples);

/// Tangent path when R^2 >= 0.85, otherwise smoothed discrete derivative.
StopSelection select_tau_stop(const std::vector<ThresholdSample> &samples, double gamma);

/// Centered moving average of forward differences, edges truncated.
/// Element j corresponds to samples[j].
std::vector<double> smoothed_derivative(const std::vector<ThresholdSample> &samples,
                                        int window = kDerivativeSmoothingWindow);

} // namespace itermask
