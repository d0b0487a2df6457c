#include <doctest.h>

#include <algorithm>

#include <Eigen/LU>

#include "itermask/maskgen.hpp"
#include "support.hpp"

using namespace itermask;

TEST_CASE("single-voxel brain fixes the center") {
  Mask brain({7, 6, 5});
  brain.set(brain.size() - 9);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = sample_mask_spec(brain, s);
    const auto i = brain.size() - 9;
    CHECK(spec.center.x() == static_cast<double>(i % 7));
    CHECK(spec.center.y() == static_cast<double>((i / 7) % 6));
    CHECK(spec.center.z() == static_cast<double>(i / 42));
  }
  CHECK_THROWS_AS(sample_mask_spec(Mask({3, 3, 3}), 1), Error);
}

TEST_CASE("eigenvalues are uniform on [0.3, 10]") {
  const Mask brain({2, 2, 2}, true);
  std::vector<double> lambdas;
  lambdas.reserve(3000000);
  for (std::uint64_t s = 0; s < 1000000; ++s) {
    const auto spec = sample_mask_spec(brain, s);
    for (int k = 0; k < 3; ++k)
      lambdas.push_back(spec.eigenvalues[k]);
  }
  CHECK(*std::min_element(lambdas.begin(), lambdas.end()) >= kMinEigenvalue);
  CHECK(*std::max_element(lambdas.begin(), lambdas.end()) <= kMaxEigenvalue);
  const double d = support::ks_statistic(lambdas, [](double x) {
    return std::clamp((x - kMinEigenvalue) / (kMaxEigenvalue - kMinEigenvalue), 0.0, 1.0);
  });
  CHECK(d < support::ks_critical_01(lambdas.size()));
}

TEST_CASE("random rotations are orthogonal") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng = make_rng(s);
    const Eigen::Matrix3d o = random_orthogonal(rng);
    CHECK((o.transpose() * o - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::fabs(std::fabs(o.determinant()) - 1.0) < 1e-10);
  }
}

TEST_CASE("sampled specs are valid") {
  const Mask brain = support::random_mask({10, 10, 10}, 2, 0.5);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto spec = sample_mask_spec(brain, s);
    CHECK_NOTHROW(validate(spec));
    CHECK(spec.upsample >= 1.0);
    CHECK(spec.upsample <= kMaxUpsample);
    CHECK(spec.n_points == kDefaultMaskPoints);
    const auto c = brain.dims();
    const std::size_t i = static_cast<std::size_t>(spec.center.x()) +
                          c.nx * (static_cast<std::size_t>(spec.center.y()) +
                                  c.ny * static_cast<std::size_t>(spec.center.z()));
    CHECK(brain[i]);
  }
}

TEST_CASE("validate rejects bad specs") {
  GaussianMaskSpec spec;
  spec.center = {1, 1, 1};
  spec.covariance = Eigen::Matrix3d::Identity();
  spec.upsample = 1.0;
  CHECK_NOTHROW(validate(spec));
  spec.upsample = 4.5;
  CHECK_THROWS_AS(validate(spec), Error);
  spec.upsample = 1.0;
  spec.covariance(0, 1) = 0.5;
  CHECK_THROWS_AS(validate(spec), Error);
  spec.covariance = -Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(validate(spec), Error);
}

namespace {

GaussianMaskSpec isotropic(double var, double upsample, std::uint64_t seed, Eigen::Vector3d c) {
  GaussianMaskSpec s;
  s.center = c;
  s.covariance = var * Eigen::Matrix3d::Identity();
  s.eigenvalues = Eigen::Vector3d::Constant(var);
  s.rotation = Eigen::Matrix3d::Identity();
  s.upsample = upsample;
  s.seed = seed;
  return s;
}

} // namespace

TEST_CASE("realized masks") {
  const Mask brain({32, 32, 32}, true);
  const auto spec = isotropic(0.3, 1.0, 4, {16, 16, 16});
  const Mask m = realize_mask(spec, brain);
  CHECK(m[brain.dims().nx * (16 + 32 * 16) + 16]);
  CHECK(m.count() < 100);
  CHECK(realize_mask(spec, brain) == m);

  const Mask half = support::random_mask(brain.dims(), 17, 0.5);
  const auto big = isotropic(10.0, 4.0, 5, {16, 16, 16});
  CHECK(realize_mask(big, half).subset_of(half));
}

TEST_CASE("upsampling grows masks") {
  const Mask brain({48, 48, 48}, true);
  int larger = 0;
  std::vector<std::size_t> small_counts, big_counts;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto spec = isotropic(10.0, 1.0, s, {24, 24, 24});
    spec.n_points = 20000;
    const auto a = realize_mask(spec, brain).count();
    spec.upsample = 4.0;
    const auto b = realize_mask(spec, brain).count();
    larger += b > a;
    small_counts.push_back(a);
    big_counts.push_back(b);
  }
  CHECK(larger == 100);

  // Median count is monotone in the upsample factor.
  std::vector<double> medians;
  for (double up : {1.0, 2.0, 3.0, 4.0}) {
    std::vector<std::size_t> counts;
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto spec = isotropic(2.0, up, 100 + s, {24, 24, 24});
      spec.n_points = 5000;
      counts.push_back(realize_mask(spec, brain).count());
    }
    std::nth_element(counts.begin(), counts.begin() + 25, counts.end());
    medians.push_back(static_cast<double>(counts[25]));
  }
  CHECK(std::is_sorted(medians.begin(), medians.end()));
}
