#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "itermask/volume.hpp"

namespace itermask {

namespace artifact {

enum class ChunkPosition { Top, Middle };

/// Strip of `width` planes along `axis` zeroed in every slice.
struct Chunk {
  ChunkPosition position = ChunkPosition::Top;
  std::size_t width = 40;
  int axis = 1;
};

/// Uniform complex k-space noise bounded by sigma * max|Re K| and
/// sigma * max|Im K|.
struct GaussianKSpace {
  double sigma = 0.2;
};

/// Adds sigma * max|K| at each location. Locations are offsets from the
/// spectrum center in units of half the extent, each component in [-1, 1].
struct Spike {
  std::vector<std::array<double, 3>> locations{{0.4, 0.4, 0.4}};
  double sigma = 0.2;
};

/// exp of a cubic polynomial in coordinates normalized to [-1, 1].
/// Coefficients follow the loop order i, then j <= 3 - i, then k <= 3 - i - j.
struct BiasField {
  std::vector<double> coefficients = std::vector<double>(20, 0.1);
};

/// k-space planes whose index along `axis` is a multiple of `period` are
/// scaled by (1 - alpha).
struct Ghosting {
  std::size_t period = 4;
  double alpha = 0.5;
  int axis = 1;
};

/// `strips` bands of `height` planes along `axis` replaced by an alternating
/// +-A pattern, A being the 99th percentile of brain intensity.
struct Zipper {
  std::size_t strips = 1;
  std::size_t height = 5;
  int axis = 1;
};

/// Marker: the corrupted volume is a different acquisition supplied by the
/// caller.
struct SequenceSwap {};

} // namespace artifact

using ArtifactSpec =
    std::variant<artifact::Chunk, artifact::GaussianKSpace, artifact::Spike, artifact::BiasField,
                 artifact::Ghosting, artifact::Zipper, artifact::SequenceSwap>;

/// Throws if any severity parameter is out of range.
void validate(const ArtifactSpec &spec);

struct Corruption {
  Volume volume;
  Mask truth; ///< empty for global artifacts
};

inline constexpr std::size_t kBiasCoefficientCount = 20;

/// Exponents (i, j, k) in coefficient order.
std::vector<std::array<int, 3>> bias_exponents();

Corruption apply_chunk(const Volume &v, const artifact::Chunk &spec);
Volume apply_gaussian_kspace(const Volume &v, const artifact::GaussianKSpace &spec,
                             std::uint64_t seed);
Volume apply_spike(const Volume &v, const artifact::Spike &spec);
Volume apply_bias_field(const Volume &v, const artifact::BiasField &spec);
Volume apply_ghosting(const Volume &v, const artifact::Ghosting &spec);
Corruption apply_zipper(const Volume &v, const artifact::Zipper &spec, std::uint64_t seed);

/// Dispatches on the spec. SequenceSwap returns the input unchanged.
Corruption apply_artifact(const Volume &v, const ArtifactSpec &spec, std::uint64_t seed);

/// Unshifted DFT index of a fractional spike location along an axis of
/// length n: round(k * n / 2) modulo n.
std::size_t spike_index(double k, std::size_t n);

/// n spike locations drawn uniformly from [-1, 1]^3.
std::vector<std::array<double, 3>> random_spike_locations(std::size_t n, std::uint64_t seed);

/// Linear-interpolated percentile (0-100) of values over the mask.
double masked_percentile(const Volume &v, const Mask &m, double pct);

/// Returns `spec` with its severity parameter replaced:
/// chunk width, gaussian/spike sigma, bias coefficient (all), ghosting alpha,
/// zipper strip count.
ArtifactSpec with_severity(const ArtifactSpec &spec, double severity);

struct SweepItem {
  double severity;
  Corruption result;
};

std::vector<SweepItem> severity_sweep(const Volume &v, const ArtifactSpec &spec,
                                      const std::vector<double> &grid, std::uint64_t seed);

std::string artifact_name(const ArtifactSpec &spec);

} // namespace itermask
