#include "itermask/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include <fftw3.h>

namespace itermask {

namespace {

// Plan creation in FFTW is not thread-safe; execution of a plan on its own
// buffers is.
std::mutex &planner_mutex() {
  static std::mutex m;
  return m;
}

enum class Direction { Forward, Backward };

void transform(const Dims &d, std::vector<std::complex<double>> &buf, Direction dir) {
  auto *data = reinterpret_cast<fftw_complex *>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    // FFTW's last dimension is the contiguous one: x.
    plan = fftw_plan_dft_3d(static_cast<int>(d.nz), static_cast<int>(d.ny),
                            static_cast<int>(d.nx), data, data,
                            dir == Direction::Forward ? FFTW_FORWARD : FFTW_BACKWARD,
                            FFTW_ESTIMATE);
  }
  if (plan == nullptr)
    throw Error("FFTW plan creation failed for " + to_string(d));
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

} // namespace

SpectralField dft_forward(const Volume &v) {
  SpectralField f{v.dims(), v.spacing(), {}};
  f.coeffs.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    f.coeffs[i] = {static_cast<double>(v[i]), 0.0};
  transform(f.dims, f.coeffs, Direction::Forward);
  return f;
}

namespace {

std::vector<std::complex<double>> inverse_raw(const SpectralField &f) {
  auto buf = f.coeffs;
  transform(f.dims, buf, Direction::Backward);
  const double inv_n = 1.0 / static_cast<double>(f.dims.count());
  for (auto &c : buf)
    c *= inv_n;
  return buf;
}

} // namespace

Volume dft_inverse(const SpectralField &f) {
  const auto buf = inverse_raw(f);
  double max_real = 0.0, max_imag = 0.0;
  for (const auto &c : buf) {
    max_real = std::max(max_real, std::fabs(c.real()));
    max_imag = std::max(max_imag, std::fabs(c.imag()));
  }
  // Absolute floor covers the all-zero field and round-off on tiny signals.
  if (max_imag > 1e-4 * max_real && max_imag > 1e-9)
    throw Error("inverse DFT: imaginary residue " + std::to_string(max_imag) +
                " exceeds tolerance (max real " + std::to_string(max_real) + ")");
  Volume out(f.dims, f.spacing);
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = static_cast<float>(buf[i].real());
  return out;
}

Volume dft_inverse_real_part(const SpectralField &f) {
  const auto buf = inverse_raw(f);
  Volume out(f.dims, f.spacing);
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = static_cast<float>(buf[i].real());
  return out;
}

AmplitudePhase amplitude_phase(const SpectralField &f) {
  AmplitudePhase ap;
  ap.amplitude.resize(f.coeffs.size());
  ap.phase.resize(f.coeffs.size());
  for (std::size_t i = 0; i < f.coeffs.size(); ++i) {
    const auto &c = f.coeffs[i];
    ap.amplitude[i] = std::abs(c);
    double phi = std::atan2(c.imag(), c.real());
    if (phi == -M_PI)
      phi = M_PI;
    ap.phase[i] = phi;
  }
  return ap;
}

SpectralField compose(const Dims &dims, const AmplitudePhase &ap, Spacing spacing) {
  SpectralField f{dims, spacing, {}};
  f.coeffs.resize(ap.amplitude.size());
  for (std::size_t i = 0; i < f.coeffs.size(); ++i)
    f.coeffs[i] = std::polar(ap.amplitude[i], ap.phase[i]);
  return f;
}

long long centered_frequency(std::size_t i, std::size_t n) {
  // Shifted position after fftshift, minus the center floor(n/2).
  const std::size_t half = n / 2;
  const std::size_t shifted = (i + half) % n;
  return static_cast<long long>(shifted) - static_cast<long long>(half);
}

double scaled_radius(double radius, const Dims &dims) {
  const double extent = std::cbrt(static_cast<double>(dims.nx) * static_cast<double>(dims.ny) *
                                  static_cast<double>(dims.nz));
  return radius * extent / 192.0;
}

Volume high_frequency_image(const Volume &v, const HighPassSpec &spec) {
  if (!(spec.radius >= 0.0))
    throw Error("high-pass radius must be >= 0");
  const Dims &d = v.dims();
  AmplitudePhase ap = amplitude_phase(dft_forward(v));
  const double r2 = spec.radius * spec.radius;
  for (std::size_t z = 0, i = 0; z < d.nz; ++z) {
    const double fz = static_cast<double>(centered_frequency(z, d.nz));
    for (std::size_t y = 0; y < d.ny; ++y) {
      const double fy = static_cast<double>(centered_frequency(y, d.ny));
      for (std::size_t x = 0; x < d.nx; ++x, ++i) {
        const double fx = static_cast<double>(centered_frequency(x, d.nx));
        if (fx * fx + fy * fy + fz * fz <= r2)
          ap.amplitude[i] = 0.0;
      }
    }
  }
  return dft_inverse(compose(d, ap, v.spacing()));
}

} // namespace itermask
