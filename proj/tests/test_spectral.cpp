#include <doctest.h>

#include "itermask/spectral.hpp"
#include "support.hpp"

using namespace itermask;
using support::cd;

namespace {

double max_coeff_diff(const SpectralField &f, const std::vector<cd> &g) {
  double m = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    m = std::max(m, std::abs(f[i] - g[i]));
  return m;
}

/// Brute-force high-pass: naive forward, zero centered |k| <= r, naive inverse.
std::vector<double> naive_high_pass(const Volume &v, double r) {
  auto k = support::naive_forward(v);
  const Dims &d = v.dims();
  for (std::size_t c = 0; c < d.nz; ++c)
    for (std::size_t b = 0; b < d.ny; ++b)
      for (std::size_t a = 0; a < d.nx; ++a) {
        // Signed frequency: indices past n/2 wrap negative, matching a
        // centered spectrum with center floor(n/2).
        auto sf = [](std::size_t i, std::size_t n) {
          const long long s = static_cast<long long>(i);
          const long long h = static_cast<long long>(n / 2);
          const long long w = s >= static_cast<long long>(n) - h ? s - static_cast<long long>(n) : s;
          return static_cast<double>(w);
        };
        const double fa = sf(a, d.nx), fb = sf(b, d.ny), fc = sf(c, d.nz);
        if (std::sqrt(fa * fa + fb * fb + fc * fc) <= r)
          k[a + d.nx * (b + d.ny * c)] = 0.0;
      }
  return support::naive_inverse_real(k, d);
}

} // namespace

TEST_CASE("forward transform of constants and impulses") {
  const SpectralField f = dft_forward(Volume({4, 4, 4}, {}, 1.0f));
  CHECK(std::abs(f[0] - cd(64.0, 0.0)) < 1e-9);
  for (std::size_t i = 1; i < f.coeffs.size(); ++i)
    CHECK(std::abs(f[i]) < 1e-9);

  Volume delta({4, 4, 4});
  delta[0] = 1.0f;
  const SpectralField g = dft_forward(delta);
  for (const auto &c : g.coeffs)
    CHECK(std::abs(c - cd(1.0, 0.0)) < 1e-12);
}

TEST_CASE("forward transform matches naive DFT") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Volume v = support::random_volume({4, 3, 5}, seed);
    CHECK(max_coeff_diff(dft_forward(v), support::naive_forward(v)) < 1e-5);
  }
}

TEST_CASE("inverse transform") {
  const Volume v = support::random_volume({6, 5, 4}, 3);
  CHECK(support::max_abs_diff(dft_inverse(dft_forward(v)), v) < 1e-4);

  SpectralField zero{{3, 3, 3}, {}, std::vector<cd>(27)};
  const Volume z = dft_inverse(zero);
  CHECK(support::max_abs_diff(z, Volume({3, 3, 3})) == 0.0);

  // Oracle forward, implementation inverse.
  SpectralField from_oracle{v.dims(), {}, support::naive_forward(v)};
  CHECK(support::max_abs_diff(dft_inverse(from_oracle), v) < 1e-4);

  // A non-Hermitian field is rejected by the strict inverse.
  SpectralField bad{{4, 1, 1}, {}, {cd(0, 0), cd(0, 4), cd(0, 0), cd(0, 0)}};
  CHECK_THROWS_AS(dft_inverse(bad), Error);
  CHECK_NOTHROW(dft_inverse_real_part(bad));
}

TEST_CASE("spacing follows the field") {
  Volume v({2, 2, 2}, {1.0, 2.0, 3.0}, 1.0f);
  CHECK(dft_inverse(dft_forward(v)).spacing() == v.spacing());
  CHECK(high_frequency_image(v, {0}).spacing() == v.spacing());
}

TEST_CASE("amplitude and phase") {
  SpectralField f{{2, 1, 1}, {}, {cd(3, 4), cd(0, 0)}};
  const auto ap = amplitude_phase(f);
  CHECK(ap.amplitude[0] == doctest::Approx(5.0));
  CHECK(ap.phase[0] == doctest::Approx(std::atan2(4.0, 3.0)));
  CHECK(ap.amplitude[1] == 0.0);
  CHECK(ap.phase[1] == 0.0);

  SpectralField neg{{1, 1, 1}, {}, {cd(-2.0, -0.0)}};
  CHECK(amplitude_phase(neg).phase[0] == doctest::Approx(std::numbers::pi));

  const Volume v = support::random_volume({5, 4, 3}, 12);
  const SpectralField g = dft_forward(v);
  const SpectralField back = compose(g.dims, amplitude_phase(g));
  CHECK(max_coeff_diff(back, g.coeffs) < 1e-6);
}

TEST_CASE("centered frequency") {
  CHECK(centered_frequency(0, 8) == 0);
  CHECK(centered_frequency(3, 8) == 3);
  CHECK(centered_frequency(4, 8) == -4);
  CHECK(centered_frequency(7, 8) == -1);
  CHECK(centered_frequency(2, 5) == 2);
  CHECK(centered_frequency(3, 5) == -2);
  CHECK(centered_frequency(0, 1) == 0);
}

TEST_CASE("high-pass filter") {
  for (double r : {0.0, 5.0, 15.0}) {
    const Volume out = high_frequency_image(Volume({8, 8, 8}, {}, 3.5f), {r});
    CHECK(support::max_abs_diff(out, Volume({8, 8, 8})) < 1e-5);
  }

  const Volume v = support::random_volume({8, 8, 8}, 21);
  double mean = 0.0;
  for (float x : v.values())
    mean += x;
  mean /= static_cast<double>(v.size());
  const Volume dc = high_frequency_image(v, {0.0});
  double err = 0.0, out_mean = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    err = std::max(err, std::fabs(dc[i] - (v[i] - mean)));
    out_mean += dc[i];
  }
  CHECK(err < 1e-4);
  CHECK(std::fabs(out_mean / v.size()) < 1e-4);

  CHECK(support::max_abs_diff(high_frequency_image(v, {2.0}), naive_high_pass(v, 2.0)) < 1e-5);

  const Volume odd = support::random_volume({5, 6, 7}, 22);
  CHECK(support::max_abs_diff(high_frequency_image(odd, {2.5}), naive_high_pass(odd, 2.5)) < 1e-5);
}

TEST_CASE("high-pass radius is inclusive") {
  // Pure cosine at frequency 2 along x survives r < 2 and is removed at r = 2.
  Volume v({16, 1, 1});
  for (std::size_t x = 0; x < 16; ++x)
    v[x] = static_cast<float>(std::cos(2.0 * std::numbers::pi * 2.0 * x / 16.0));
  CHECK(support::max_abs_diff(high_frequency_image(v, {1.99}), v) < 1e-5);
  CHECK(support::max_abs_diff(high_frequency_image(v, {2.0}), Volume({16, 1, 1})) < 1e-5);
}

TEST_CASE("linearity and Parseval") {
  const Volume u = support::random_volume({6, 6, 6}, 31), w = support::random_volume({6, 6, 6}, 32);
  Volume mix(u.dims());
  const double alpha = 0.75, beta = -1.25;
  for (std::size_t i = 0; i < u.size(); ++i)
    mix[i] = static_cast<float>(alpha * u[i] + beta * w[i]);
  const auto fu = dft_forward(u), fw = dft_forward(w), fm = dft_forward(mix);
  double lin = 0.0;
  for (std::size_t i = 0; i < fm.coeffs.size(); ++i)
    lin = std::max(lin, std::abs(fm[i] - (alpha * fu[i] + beta * fw[i])));
  CHECK(lin < 1e-5);

  double sx = 0.0, sk = 0.0;
  for (float x : u.values())
    sx += static_cast<double>(x) * x;
  for (const auto &c : fu.coeffs)
    sk += std::norm(c);
  CHECK(std::fabs(sx - sk / u.size()) / sx < 1e-5);
}

TEST_CASE("scaled radius") {
  CHECK(scaled_radius(15.0, {192, 192, 192}) == doctest::Approx(15.0));
  CHECK(scaled_radius(15.0, {64, 64, 64}) == doctest::Approx(5.0));
}
