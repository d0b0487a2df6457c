#include <doctest.h>

#include <algorithm>

#include "itermask/metrics.hpp"
#include "itermask/phantom.hpp"
#include "itermask/refine.hpp"
#include "support.hpp"

using namespace itermask;

TEST_CASE("error map") {
  const Volume x = support::random_volume({5, 5, 5}, 1);
  CHECK(error_map(x, x) == Volume({5, 5, 5}));

  Volume zero({2, 2, 2}), pred({2, 2, 2});
  pred[3] = -3.0f;
  const Volume e = error_map(zero, pred);
  CHECK(e[3] == 3.0f);
  CHECK(e[0] == 0.0f);

  const Volume y = support::random_volume({5, 5, 5}, 2);
  const Volume f = error_map(x, y);
  for (std::size_t i = 0; i < f.size(); ++i)
    CHECK(f[i] == std::fabs(y[i] - x[i]));
  CHECK_THROWS_AS(error_map(x, Volume({1, 1, 1})), Error);
}

TEST_CASE("update_mask") {
  const Dims d{6, 6, 6};
  const Volume e = support::random_volume(d, 3, 0.0f, 1.0f);
  const Mask brain = support::random_mask(d, 4, 0.6);

  CHECK(update_mask(e, std::numeric_limits<double>::infinity(), brain).empty());
  CHECK_THROWS_AS(update_mask(e, std::numeric_limits<double>::quiet_NaN(), brain), Error);

  // Strict inequality: a zero error is not below a zero threshold.
  CHECK(update_mask(Volume(d), 0.0, brain) == brain);
  Volume some = e;
  some[0] = 0.0f;
  CHECK(update_mask(some, 0.0, brain) == brain);

  std::vector<float> vals;
  for (auto i : brain.indices())
    vals.push_back(e[i]);
  std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
  const double median = vals[vals.size() / 2];
  const Mask m = update_mask(e, median, brain);
  std::size_t expected = 0;
  for (auto i : brain.indices())
    expected += static_cast<double>(e[i]) >= median;
  CHECK(m.count() == expected);
  CHECK(m.subset_of(brain));
}

TEST_CASE("noise fill") {
  const Dims d{20, 20, 20};
  const Volume x = support::random_volume(d, 5, 10.0f, 11.0f);
  const Mask mask = support::random_mask(d, 6, 0.5);
  Rng a = make_rng(9, 1);
  const Volume f = noise_fill(x, mask, a);
  std::vector<double> inside;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (mask[i])
      inside.push_back(f[i]);
    else
      CHECK(f[i] == x[i]);
  }
  CHECK(support::ks_statistic(inside, support::normal_cdf) < support::ks_critical_01(inside.size()));

  // The stream advances by one draw per voxel whatever the mask.
  Rng b = make_rng(9, 1), c = make_rng(9, 1);
  noise_fill(x, Mask(d), b);
  noise_fill(x, Mask(d, true), c);
  CHECK(b() == c());
}

namespace {

struct Scene {
  Phantom ph;
  Volume guidance;
};

Scene scene(bool lesion, double noise, std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  spec.noise_std = noise;
  if (lesion)
    spec.lesion = LesionSpec{{18.0, 15.5, 14.0}, 5.0, 4.0};
  Phantom p = make_phantom(spec, seed);
  return {std::move(p), Volume(spec.dims)};
}

} // namespace

TEST_CASE("zero-anomaly phantom with the oracle empties the mask") {
  const Scene s = scene(false, 0.0, 1);
  const recon::PhantomOracle o{std::make_shared<const Volume>(s.ph.clean)};
  for (double tau : {1e-6, 0.1, 5.0}) {
    const auto r = refine(s.ph.observed, s.ph.brain, o, s.guidance, {tau, 3, kDefaultMaxIters});
    CHECK(r.mask.empty());
    CHECK(r.trace.terminated_reason == TerminationReason::MaskEmpty);
  }
}

TEST_CASE("lesion phantom with the oracle") {
  const Scene s = scene(true, 0.1, 2);
  const recon::PhantomOracle o{std::make_shared<const Volume>(s.ph.clean)};
  const auto r = refine(s.ph.observed, s.ph.brain, o, s.guidance, {0.5, 3, kDefaultMaxIters});
  CHECK(overlap_metrics(r.mask, s.ph.truth).dsc >= 0.95);
  // The oracle error is fixed, so the result is a direct threshold.
  CHECK(r.mask == update_mask(error_map(s.ph.observed, s.ph.clean), 0.5, s.ph.brain));
  CHECK(r.trace.terminated_reason == TerminationReason::Converged);
}

TEST_CASE("max_iters = 0 returns the brain") {
  const Scene s = scene(true, 0.1, 3);
  const auto r = refine(s.ph.observed, s.ph.brain, recon::Identity{}, s.guidance, {0.5, 1, 0});
  CHECK(r.mask == s.ph.brain);
  CHECK(r.trace.iterations.empty());
  CHECK(r.trace.terminated_reason == TerminationReason::MaxIters);
}

TEST_CASE("termination and trace invariants") {
  const Scene s = scene(true, 0.1, 4);
  int calls = 0;
  recon::Callback counting{[&](const ReconstructionRequest &r) {
    ++calls;
    return r.corrupted;
  }};
  for (int max_iters : {1, 5, 40}) {
    calls = 0;
    const auto r = refine(s.ph.observed, s.ph.brain, counting, s.guidance, {1.0, 7, max_iters});
    CHECK(calls <= max_iters + 1);
    CHECK(r.trace.iterations.size() <= static_cast<std::size_t>(max_iters));
    for (std::size_t k = 0; k < r.trace.iterations.size(); ++k)
      CHECK(r.trace.iterations[k].t == static_cast<int>(k));
    CHECK(r.mask.subset_of(s.ph.brain));
    const auto &its = r.trace.iterations;
    if (r.trace.terminated_reason == TerminationReason::Converged) {
      const double prev = its.size() > 1 ? its[its.size() - 2].masked_voxels : s.ph.brain.count();
      CHECK(std::fabs(static_cast<double>(its.back().masked_voxels) - prev) / prev < 0.01);
    } else if (r.trace.terminated_reason == TerminationReason::MaskEmpty) {
      CHECK(its.back().masked_voxels == 0);
    } else {
      CHECK(its.size() == static_cast<std::size_t>(max_iters));
    }
  }
}

TEST_CASE("refinement is reproducible") {
  const Scene s = scene(true, 0.1, 5);
  const RefineOptions opts{0.8, 11, 30};
  const auto a = refine(s.ph.observed, s.ph.brain, recon::Identity{}, s.guidance, opts);
  const auto b = refine(s.ph.observed, s.ph.brain, recon::Identity{}, s.guidance, opts);
  CHECK(a.mask == b.mask);
  REQUIRE(a.trace.iterations.size() == b.trace.iterations.size());
  for (std::size_t k = 0; k < a.trace.iterations.size(); ++k) {
    CHECK(a.trace.iterations[k].masked_voxels == b.trace.iterations[k].masked_voxels);
    CHECK(a.trace.iterations[k].mean_error_in_mask == b.trace.iterations[k].mean_error_in_mask);
  }
  CHECK(a.final_error == b.final_error);

  RefineOptions other = opts;
  other.seed = 12;
  const auto c = refine(s.ph.observed, s.ph.brain, recon::Identity{}, s.guidance, other);
  CHECK(c.final_error != a.final_error);
}

TEST_CASE("refine preconditions and error context") {
  const Scene s = scene(false, 0.1, 6);
  CHECK_THROWS_AS(refine(s.ph.observed, s.ph.brain, recon::Identity{}, s.guidance, {0.0, 1, 5}),
                  Error);
  CHECK_THROWS_AS(refine(s.ph.observed, s.ph.brain, recon::Identity{}, Volume({2, 2, 2}),
                         {0.5, 1, 5}),
                  Error);
  // Predicts half of the masked voxels exactly so the mask keeps shrinking.
  const Volume &x = s.ph.observed;
  recon::Callback failing{[&x](const ReconstructionRequest &r) -> Volume {
    if (r.iteration == 2)
      throw Error("model exploded");
    Volume out = r.corrupted;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (r.mask[i] && (mix_seed(i, static_cast<std::uint64_t>(r.iteration)) & 1) == 0)
        out[i] = x[i];
    return out;
  }};
  CHECK_THROWS_WITH_AS(refine(x, s.ph.brain, failing, s.guidance, {0.01, 1, 10}),
                       doctest::Contains("iteration 2: model exploded"), ReconstructionError);
}
