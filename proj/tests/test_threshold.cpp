#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "itermask/threshold.hpp"
#include "support.hpp"

using namespace itermask;

namespace {

std::vector<ThresholdSample> tangent_samples(double a, double b, int n, double noise,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, noise);
  std::vector<ThresholdSample> s;
  for (int t = 1; t <= n; ++t)
    s.push_back({t, a * std::tan(b * t) + (noise > 0 ? eps(rng) : 0.0)});
  return s;
}

std::vector<ThresholdSample> jump_samples(int jump_t, double height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, 0.002);
  std::vector<ThresholdSample> s;
  for (int t = 1; t <= 100; ++t)
    s.push_back({t, 0.1 + 0.0005 * t + eps(rng) + (t >= jump_t ? height : 0.0)});
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double deriv(double a, double b, double t) {
  const double c = std::cos(b * t);
  return a * b / (c * c);
}

/// Scan input whose oracle error field is `err` exactly.
struct ErrorScene {
  Volume x;
  Mask brain;
  recon::PhantomOracle oracle;
};

ErrorScene error_scene(const Volume &err, const Mask &brain) {
  Volume x = support::random_volume(err.dims(), 77, 1.0f, 2.0f);
  Volume clean = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    clean[i] = x[i] - err[i];
  return {x, brain, {std::make_shared<const Volume>(clean)}};
}

} // namespace

TEST_CASE("scan unmasks exactly k voxels per iteration") {
  const Dims d{10, 10, 1};
  const Mask brain(d, true);
  std::vector<std::size_t> seen;
  recon::Callback record{[&](const ReconstructionRequest &r) {
    seen.push_back(r.mask.count());
    return r.corrupted;
  }};
  const auto samples =
      scan_thresholds(support::random_volume(d, 1), brain, record, Volume(d), {});
  CHECK(samples.size() == 100);
  for (std::size_t t = 0; t < seen.size(); ++t)
    CHECK(seen[t] == 100 - t);
  for (std::size_t j = 0; j < samples.size(); ++j) {
    CHECK(samples[j].t == static_cast<int>(j) + 1);
    CHECK(samples[j].tau >= 0.0);
  }
}

TEST_CASE("scan cumulative unmasked count is min(|brain|, t k)") {
  const Dims d{13, 11, 7};
  const Mask brain = support::random_mask(d, 4, 0.7);
  const std::size_t n = brain.count();
  const auto k = static_cast<std::size_t>(std::ceil(0.01 * n));
  std::vector<std::size_t> seen;
  recon::Callback record{[&](const ReconstructionRequest &r) {
    seen.push_back(r.mask.count());
    return r.corrupted;
  }};
  const auto samples = scan_thresholds(support::random_volume(d, 5), brain, record, Volume(d), {3});
  CHECK(samples.size() == (n + k - 1) / k);
  for (std::size_t t = 0; t < seen.size(); ++t)
    CHECK(n - seen[t] == std::min(n, t * k));
}

TEST_CASE("constant error gives a constant curve") {
  const Dims d{8, 8, 8};
  const auto s = error_scene(Volume(d, {}, 0.7f), Mask(d, true));
  const auto samples = scan_thresholds(s.x, s.brain, s.oracle, Volume(d), {});
  for (const auto &p : samples)
    CHECK(p.tau == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("one-percent lesion produces a final jump") {
  const Dims d{20, 20, 20};
  Volume err(d, {}, 0.1f);
  for (std::size_t i = 0; i < 80; ++i)
    err[4000 + i] = 5.0f; // 80 of 8000 voxels
  const auto s = error_scene(err, Mask(d, true));
  Mask truth(d);
  for (std::size_t i = 0; i < 80; ++i)
    truth.set(4000 + i);
  std::vector<double> dice;
  ScanOptions so;
  so.truth = &truth;
  so.dice_out = &dice;
  const auto samples = scan_thresholds(s.x, s.brain, s.oracle, Volume(d), so);
  REQUIRE(samples.size() == 100);
  for (int t = 0; t < 99; ++t)
    CHECK(samples[t].tau == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(samples[99].tau == doctest::Approx(5.0).epsilon(1e-5));
  REQUIRE(dice.size() == 100);
  CHECK(dice[98] == doctest::Approx(1.0));
}

TEST_CASE("scan ties are broken by voxel index") {
  const Dims d{10, 10, 1};
  std::vector<std::size_t> unmasked;
  recon::Callback flat{[&](const ReconstructionRequest &r) {
    if (r.iteration == 1)
      for (std::size_t i = 0; i < r.mask.size(); ++i)
        if (!r.mask[i])
          unmasked.push_back(i);
    return Volume(d, {}, 0.25f);
  }};
  const auto samples = scan_thresholds(Volume(d), Mask(d, true), flat, Volume(d), {});
  CHECK(unmasked == std::vector<std::size_t>{0});
  for (const auto &p : samples)
    CHECK(p.tau == 0.25);
}

TEST_CASE("tangent fit recovers noise-free parameters") {
  const auto fit = fit_tangent(tangent_samples(0.05, 0.012, 80, 0.0, 0));
  CHECK(std::fabs(fit.a - 0.05) / 0.05 < 0.01);
  CHECK(std::fabs(fit.b - 0.012) / 0.012 < 0.01);
  CHECK(fit.r_squared > 0.999);
  CHECK(fit.window == 80);
}

TEST_CASE("tangent fit under noise") {
  std::vector<double> as, bs, r2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fit = fit_tangent(tangent_samples(0.05, 0.012, 80, 0.002, seed));
    as.push_back(fit.a);
    bs.push_back(fit.b);
    r2.push_back(fit.r_squared);
  }
  CHECK(std::fabs(median(as) - 0.05) / 0.05 < 0.10);
  CHECK(std::fabs(median(bs) - 0.012) / 0.012 < 0.10);
  CHECK(median(r2) > 0.9);
}

TEST_CASE("r_squared matches the explicit formula") {
  std::vector<ThresholdSample> lin;
  for (int t = 1; t <= 60; ++t)
    lin.push_back({t, 0.01 * t});
  const auto fit = fit_tangent(lin);
  double mean = 0, ss_res = 0, ss_tot = 0;
  for (const auto &s : lin)
    mean += s.tau;
  mean /= lin.size();
  for (const auto &s : lin) {
    const double r = s.tau - fit.a * std::tan(fit.b * s.t);
    ss_res += r * r;
    ss_tot += (s.tau - mean) * (s.tau - mean);
  }
  CHECK(fit.r_squared == doctest::Approx(1.0 - ss_res / ss_tot).epsilon(1e-12));
  CHECK(fit.r_squared <= 1.0);
  CHECK(fit.b * 60 < std::numbers::pi / 2);
}

TEST_CASE("fit window and degenerate inputs") {
  const auto long_curve = tangent_samples(0.05, 0.012, 120, 0.0, 0);
  CHECK(fit_tangent(long_curve).window == 80);
  CHECK(fit_tangent(tangent_samples(0.05, 0.012, 30, 0.0, 0)).window == 30);

  CHECK_THROWS_AS(fit_tangent(tangent_samples(0.05, 0.012, 4, 0.0, 0)), Error);

  std::vector<ThresholdSample> flat;
  for (int t = 1; t <= 20; ++t)
    flat.push_back({t, 0.7});
  CHECK_THROWS_AS(fit_tangent(flat), DegenerateFitError);

  std::vector<ThresholdSample> zeros;
  for (int t = 1; t <= 20; ++t)
    zeros.push_back({t, 0.0});
  const auto z = fit_tangent(zeros);
  CHECK(z.r_squared == 1.0);
  CHECK(z.a == 0.0);
}

TEST_CASE("fit is scale-equivariant") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = tangent_samples(0.05, 0.012, 80, 0.002, seed);
    const auto base = fit_tangent(s);
    for (double c : {0.1, 3.0, 250.0}) {
      auto scaled = s;
      for (auto &p : scaled)
        p.tau *= c;
      const auto f = fit_tangent(scaled);
      CHECK(f.a == doctest::Approx(c * base.a).epsilon(1e-6));
      CHECK(std::fabs(f.b - base.b) <= 1e-6 * base.b);
      CHECK(std::fabs(f.r_squared - base.r_squared) < 1e-9);
    }
  }
}

TEST_CASE("tangent stop on perfect samples") {
  const double a = 0.05, b = 0.012, gamma = 0.01;
  const auto sel = select_tau_stop(tangent_samples(a, b, 80, 0.0, 0), gamma);
  REQUIRE(sel.method_used == StopMethod::TangentFit);
  REQUIRE(sel.fit);
  const double fa = sel.fit->a, fb = sel.fit->b;
  CHECK(deriv(fa, fb, sel.stop_t) > gamma);
  CHECK_FALSE(deriv(fa, fb, sel.stop_t - 1) > gamma);
  const double t_star = std::acos(std::sqrt(a * b / gamma)) / b;
  CHECK(std::fabs(sel.stop_t - t_star) <= 1.0);
  CHECK(sel.tau_stop == doctest::Approx(fa * std::tan(fb * sel.stop_t)));
  CHECK_FALSE(sel.no_crossing);
}

TEST_CASE("fallback selects the injected jump") {
  for (int k = 0; k < 10; ++k) {
    const int jump = 55 + k;
    const auto samples = jump_samples(jump, 0.5 + 0.1 * k, k);
    const auto sel = select_tau_stop(samples, 0.05);
    REQUIRE(sel.fit);
    CHECK(sel.fit->r_squared < kMinRSquared);
    CHECK(sel.method_used == StopMethod::DiscreteDerivative);
    CHECK(std::abs(sel.stop_t - jump) <= 3);
    CHECK(sel.tau_stop == samples[sel.stop_t - 1].tau);
  }
}

TEST_CASE("constant samples never cross") {
  std::vector<ThresholdSample> flat;
  for (int t = 1; t <= 50; ++t)
    flat.push_back({t, 0.3});
  for (double gamma : {1e-9, 0.01, 10.0}) {
    const auto sel = select_tau_stop(flat, gamma);
    CHECK(sel.no_crossing);
    CHECK(sel.tau_stop == 0.3);
    CHECK(sel.stop_t == 50);
    CHECK(sel.method_used == StopMethod::DiscreteDerivative);
  }
  CHECK_THROWS_AS(select_tau_stop(flat, 0.0), Error);
}

TEST_CASE("larger gamma never stops earlier") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = tangent_samples(0.05, 0.012, 80, 0.002, seed);
    int prev = 0;
    for (double gamma : {0.001, 0.005, 0.01, 0.02, 0.05, 0.1}) {
      const auto sel = select_tau_stop(s, gamma);
      REQUIRE(sel.method_used == StopMethod::TangentFit);
      CHECK(sel.stop_t >= prev);
      prev = sel.stop_t;
    }
  }
  // Fallback branch on a monotone smoothed derivative.
  std::vector<ThresholdSample> convex;
  for (int t = 1; t <= 100; ++t)
    convex.push_back({t, (t % 2 ? 0.0 : 0.3) + 1e-4 * t * t});
  int prev = 0;
  for (double gamma : {0.001, 0.005, 0.01, 0.015}) {
    const auto sel = select_tau_stop(convex, gamma);
    if (sel.method_used == StopMethod::DiscreteDerivative && !sel.no_crossing) {
      CHECK(sel.stop_t >= prev);
      prev = sel.stop_t;
    }
  }
}

TEST_CASE("method is tangent iff r_squared >= 0.85") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 60; ++k) {
    const double noise = 0.001 + 0.05 * u(rng);
    const auto s = tangent_samples(0.05, 0.012, 90, noise, k);
    const auto sel = select_tau_stop(s, 0.01);
    REQUIRE(sel.fit);
    CHECK((sel.method_used == StopMethod::TangentFit) == (sel.fit->r_squared >= kMinRSquared));
  }
}

TEST_CASE("smoothed derivative") {
  std::vector<ThresholdSample> s;
  const double v[] = {0, 1, 3, 6, 10, 15, 21};
  for (int t = 0; t < 7; ++t)
    s.push_back({t + 1, v[t]});
  // Differences 1 2 3 4 5 6, window 5 truncated at the edges.
  const auto d = smoothed_derivative(s);
  REQUIRE(d.size() == 6);
  CHECK(d[0] == doctest::Approx(2.0));
  CHECK(d[1] == doctest::Approx(2.5));
  CHECK(d[2] == doctest::Approx(3.0));
  CHECK(d[3] == doctest::Approx(4.0));
  CHECK(d[4] == doctest::Approx(4.5));
  CHECK(d[5] == doctest::Approx(5.0));
  CHECK(smoothed_derivative({{1, 0.0}}).empty());
}
