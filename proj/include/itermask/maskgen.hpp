#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Core>

#include "itermask/random.hpp"
#include "itermask/volume.hpp"

namespace itermask {

/// Anisotropic Gaussian blob used to synthesize training masks.
struct GaussianMaskSpec {
  Eigen::Vector3d center;     ///< voxel coordinates (x, y, z)
  Eigen::Matrix3d covariance; ///< O diag(lambda) O^T, voxel units
  Eigen::Vector3d eigenvalues;
  Eigen::Matrix3d rotation;
  std::size_t n_points = 100000;
  double upsample = 1.0;
  std::uint64_t seed = 0;
};

inline constexpr double kMinEigenvalue = 0.3;
inline constexpr double kMaxEigenvalue = 10.0;
inline constexpr double kMaxUpsample = 4.0;
inline constexpr std::size_t kDefaultMaskPoints = 100000;

/// Haar-uniform random orthogonal 3x3 matrix: QR of a standard-normal matrix
/// with the signs of R's diagonal folded into Q.
Eigen::Matrix3d random_orthogonal(Rng &rng);

/// Draws a center uniformly over brain voxels, eigenvalues from U[0.3, 10],
/// a random rotation and an upsample factor from U[1, 4].
GaussianMaskSpec sample_mask_spec(const BrainMask &brain, std::uint64_t seed);

/// Throws if the covariance is not symmetric positive-definite or upsample is
/// outside [1, 4].
void validate(const GaussianMaskSpec &spec);

/// Samples n_points from N(center, covariance), scales their displacement
/// from the center by `upsample`, rounds to voxels and keeps those in the brain.
RefinementMask realize_mask(const GaussianMaskSpec &spec, const BrainMask &brain);

} // namespace itermask
