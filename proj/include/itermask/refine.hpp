#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "itermask/random.hpp"
#include "itermask/reconstruct.hpp"
#include "itermask/volume.hpp"

namespace itermask {

/// Per-voxel reconstruction error |x_pred - x|.
Volume error_map(const Volume &x, const Volume &x_pred);

/// Eq. 6 over every brain voxel: unmasked where e < tau, masked otherwise.
/// Voxels outside the brain are never masked.
RefinementMask update_mask(const Volume &e, double tau, const BrainMask &brain);

/// x_hat = eps * m + x * (1 - m), eps drawn from `rng` for every voxel in
/// index order so the stream advances identically regardless of the mask.
Volume noise_fill(const Volume &x, const RefinementMask &mask, Rng &rng);

enum class TerminationReason { Converged, MaxIters, MaskEmpty };
std::string to_string(TerminationReason r);

struct IterationRecord {
  int t = 0;
  std::size_t masked_voxels = 0; ///< size of the updated mask
  double threshold_used = 0.0;
  double mean_error_in_mask = 0.0; ///< mean error over the mask fed to this iteration
};

struct RefinementTrace {
  std::vector<IterationRecord> iterations;
  TerminationReason terminated_reason = TerminationReason::MaxIters;
};

struct RefinementResult {
  RefinementMask mask;
  RefinementTrace trace;
  Volume final_error;
  Volume final_prediction; ///< reconstructor output of the last iteration
};

inline constexpr int kDefaultMaxIters = 200;
inline constexpr double kShrinkStopFraction = 0.01;

struct RefineOptions {
  double tau_stop = 0.0;
  std::uint64_t seed = 0;
  int max_iters = kDefaultMaxIters;
};

/// Iterative spatial mask refinement. Starts from the whole brain, and each
/// iteration noise-fills the mask, reconstructs, and re-thresholds the error.
/// Stops once the mask changes by less than 1% of its previous size, empties,
/// or max_iters iterations have run.
RefinementResult refine(const Volume &x, const BrainMask &brain, const ReconstructorKind &kind,
                        const Volume &guidance, const RefineOptions &opts);

} // namespace itermask
