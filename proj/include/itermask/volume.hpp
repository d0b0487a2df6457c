#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace itermask {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
  using Error::Error;
};

struct Dims {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims &, const Dims &) = default;
};

std::string to_string(const Dims &d);

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  friend bool operator==(const Spacing &, const Spacing &) = default;
};

/// Dense scalar voxel grid. Linear index is x + nx * (y + ny * z), so x is the
/// fastest-varying axis (the NIfTI ordering).
class Volume {
public:
  Volume() = default;
  explicit Volume(Dims dims, Spacing spacing = {}, float fill = 0.0f);
  Volume(Dims dims, Spacing spacing, std::vector<float> data);

  const Dims &dims() const { return dims_; }
  const Spacing &spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  std::array<std::size_t, 3> coords(std::size_t i) const {
    return {i % dims_.nx, (i / dims_.nx) % dims_.ny, i / (dims_.nx * dims_.ny)};
  }

  float &operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float &at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float> &values() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const Volume &, const Volume &) = default;

private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<float> data_;
};

/// Boolean voxel set sharing the Volume index layout. Used both for the brain
/// region and for the refinement mask.
class Mask {
public:
  Mask() = default;
  explicit Mask(Dims dims, bool fill = false);

  const Dims &dims() const { return dims_; }
  std::size_t size() const { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool subset_of(const Mask &other) const;
  /// Linear indices of set voxels, ascending.
  std::vector<std::size_t> indices() const;

  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const Mask &, const Mask &) = default;

private:
  Dims dims_{};
  std::vector<std::uint8_t> bits_;
};

using BrainMask = Mask;
using RefinementMask = Mask;

Mask mask_and(const Mask &a, const Mask &b);
Mask mask_or(const Mask &a, const Mask &b);
Mask mask_minus(const Mask &a, const Mask &b);

/// Centroid of the set voxels in index coordinates. Requires a nonempty mask.
std::array<double, 3> centroid(const Mask &m);

// ---- file I/O -------------------------------------------------------------

enum class VolumeFormat { Raw, Nifti1 };

/// Sidecar path for a raw payload: same basename, `.json` extension.
std::filesystem::path sidecar_path(const std::filesystem::path &payload);

/// Format chosen from the extension: `.nii` is NIfTI-1, anything else raw.
VolumeFormat format_from_path(const std::filesystem::path &path);

Volume load_volume(const std::filesystem::path &path, VolumeFormat format);
inline Volume load_volume(const std::filesystem::path &path) {
  return load_volume(path, format_from_path(path));
}

/// Writes little-endian float32 payload and its JSON sidecar.
void save_volume(const Volume &v, const std::filesystem::path &path,
                 const std::string &extra_sidecar_json = {});

/// Masks are stored as raw uint8 {0,1} payloads with dtype "u8".
Mask load_mask(const std::filesystem::path &path);
void save_mask(const Mask &m, const std::filesystem::path &path, Spacing spacing = {},
               const std::string &extra_sidecar_json = {});

// ---- preprocessing ----------------------------------------------------------

/// Voxels with |value| > threshold.
BrainMask derive_brain_mask(const Volume &v, float threshold = 0.0f);

struct NormalizationReport {
  std::vector<double> mean_history;
  std::vector<double> std_history;
  int passes = 0;
  /// Composite affine applied to brain voxels: out = (in - offset) / scale.
  double offset = 0.0;
  double scale = 1.0;
};

struct NormalizationResult {
  Volume volume;
  NormalizationReport report;
};

inline constexpr int kNormalizationRepeats = 3;
inline constexpr double kNormalizationBand = 3.0;

/// Z-scores the brain region, then three more times recomputes mean and std
/// from brain voxels lying within +-3 std of the current distribution and
/// re-normalizes. Background voxels are left untouched; no value is clamped.
NormalizationResult normalize_iterative_zscore(const Volume &v, const BrainMask &brain);

/// Applies a previously computed normalization affine to another volume over
/// the same brain region.
Volume apply_normalization(const Volume &v, const BrainMask &brain, const NormalizationReport &r);

/// Throws unless all spacing components agree within 1e-6 mm.
void check_isotropic(const Volume &v);

inline constexpr Dims kStandardDims{192, 192, 192};

/// Crops or zero-pads to `target`, placing the centroid of the nonzero
/// region at the output center (target / 2).
Volume crop_or_pad(const Volume &v, Dims target = kStandardDims);

} // namespace itermask
