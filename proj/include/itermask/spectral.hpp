#pragma once

#include <complex>
#include <vector>

#include "itermask/volume.hpp"

namespace itermask {

/// Complex spectrum of a Volume in unshifted DFT index order (DC at index 0),
/// laid out like the source volume.
struct SpectralField {
  Dims dims;
  Spacing spacing;
  std::vector<std::complex<double>> coeffs;

  std::complex<double> &operator[](std::size_t i) { return coeffs[i]; }
  const std::complex<double> &operator[](std::size_t i) const { return coeffs[i]; }
};

/// Unnormalized forward DFT:
///   F(a,b,c) = sum x(h,w,d) exp(-i 2 pi (a h / H + b w / W + c d / D)).
SpectralField dft_forward(const Volume &v);

/// Inverse DFT with 1/N normalization. Throws if the result carries an
/// imaginary residue above 1e-4 * max|real| (the field was expected to be
/// Hermitian).
Volume dft_inverse(const SpectralField &f);

/// Inverse DFT keeping only the real part, for deliberately non-Hermitian
/// spectra (k-space corruption).
Volume dft_inverse_real_part(const SpectralField &f);

struct AmplitudePhase {
  std::vector<double> amplitude;
  std::vector<double> phase; ///< atan2(imag, real), in (-pi, pi]
};

AmplitudePhase amplitude_phase(const SpectralField &f);

/// Rebuilds coefficients from A * exp(i phi).
SpectralField compose(const Dims &dims, const AmplitudePhase &ap, Spacing spacing = {});

/// Signed frequency of unshifted index i along an axis of length n, i.e. the
/// offset from the spectrum center floor(n/2) after centering.
long long centered_frequency(std::size_t i, std::size_t n);

struct HighPassSpec {
  double radius = 15.0;
};

inline constexpr double kDefaultHighPassRadius = 15.0;

/// Scales a radius defined for 192^3 volumes to the geometric-mean extent of
/// `dims`.
double scaled_radius(double radius, const Dims &dims);

/// High-frequency structural image: zeroes the amplitude of every frequency
/// within Euclidean distance `radius` of the spectrum center, keeps all
/// phase, and transforms back.
Volume high_frequency_image(const Volume &v, const HighPassSpec &spec);

} // namespace itermask
