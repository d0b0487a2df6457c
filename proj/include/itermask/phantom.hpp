#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "itermask/volume.hpp"

namespace itermask {

struct LesionSpec {
  std::array<double, 3> center{};
  double radius = 8.0;
  double offset = 4.0;
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  /// Brain ellipsoid semi-axes as fractions of each extent.
  std::array<double, 3> brain_semi_axes{0.4, 0.4, 0.4};
  double noise_std = 0.1;
  std::optional<LesionSpec> lesion;
};

struct Phantom {
  Volume clean;    ///< tissue without lesion or noise
  Volume observed; ///< clean + lesion offset + N(0, noise_std) inside the brain
  BrainMask brain;
  Mask truth; ///< lesion voxels
};

/// Ellipsoidal brain filled with a smooth low-frequency field plus fine
/// periodic texture (so the high-pass guidance carries structure), with an
/// optional spherical lesion. Background is exactly zero.
Phantom make_phantom(const PhantomSpec &spec, std::uint64_t seed);

/// Center of the phantom grid, (n - 1) / 2 per axis.
std::array<double, 3> grid_center(const Dims &d);

/// Voxels within Euclidean distance `radius` of `center`.
Mask ball(const Dims &d, std::array<double, 3> center, double radius);

} // namespace itermask
