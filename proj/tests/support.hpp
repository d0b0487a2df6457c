#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "itermask/volume.hpp"

namespace support {

using namespace itermask;
using cd = std::complex<double>;

inline Volume random_volume(Dims d, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Volume v(d);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = u(rng);
  return v;
}

inline Mask random_mask(Dims d, std::uint64_t seed, double p) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Mask m(d);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.set(i, b(rng));
  return m;
}

/// Direct triple-sum DFT. sign = -1 forward, +1 inverse (unnormalized).
inline std::vector<cd> naive_dft(const std::vector<cd> &in, Dims d, int sign) {
  std::vector<cd> out(in.size());
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < d.nz; ++c)
    for (std::size_t b = 0; b < d.ny; ++b)
      for (std::size_t a = 0; a < d.nx; ++a) {
        cd acc = 0.0;
        for (std::size_t z = 0; z < d.nz; ++z)
          for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
              const double ph = two_pi * (static_cast<double>(a * x) / d.nx +
                                          static_cast<double>(b * y) / d.ny +
                                          static_cast<double>(c * z) / d.nz);
              acc += in[x + d.nx * (y + d.ny * z)] * std::polar(1.0, sign * ph);
            }
        out[a + d.nx * (b + d.ny * c)] = acc;
      }
  return out;
}

inline std::vector<cd> naive_forward(const Volume &v) {
  std::vector<cd> in(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    in[i] = v[i];
  return naive_dft(in, v.dims(), -1);
}

/// Real part of the normalized inverse.
inline std::vector<double> naive_inverse_real(const std::vector<cd> &k, Dims d) {
  const auto x = naive_dft(k, d, +1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i].real() / static_cast<double>(x.size());
  return out;
}

inline double max_abs_diff(const Volume &a, const Volume &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline double max_abs_diff(const Volume &a, const std::vector<double> &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// One-sample Kolmogorov-Smirnov statistic.
template <typename Cdf> double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// Asymptotic KS critical value at alpha = 0.01.
inline double ks_critical_01(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("itermask-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string &name) const { return path / name; }
};

} // namespace support
