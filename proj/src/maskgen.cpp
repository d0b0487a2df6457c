#include "itermask/maskgen.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace itermask {

Eigen::Matrix3d random_orthogonal(Rng &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Matrix3d g;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r)
      g(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
  Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Matrix3d rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < 3; ++k)
    if (rmat(k, k) < 0.0)
      q.col(k) = -q.col(k);
  return q;
}

GaussianMaskSpec sample_mask_spec(const BrainMask &brain, std::uint64_t seed) {
  const auto voxels = brain.indices();
  if (voxels.empty())
    throw Error("sample_mask_spec: empty brain mask");
  Rng rng = make_rng(seed, 0);
  std::uniform_int_distribution<std::size_t> pick(0, voxels.size() - 1);
  std::uniform_real_distribution<double> eig(kMinEigenvalue, kMaxEigenvalue);
  std::uniform_real_distribution<double> up(1.0, kMaxUpsample);

  GaussianMaskSpec spec;
  const Dims &d = brain.dims();
  const std::size_t i = voxels[pick(rng)];
  spec.center = {static_cast<double>(i % d.nx), static_cast<double>((i / d.nx) % d.ny),
                 static_cast<double>(i / (d.nx * d.ny))};
  spec.eigenvalues = {eig(rng), eig(rng), eig(rng)};
  spec.rotation = random_orthogonal(rng);
  spec.covariance = spec.rotation * spec.eigenvalues.asDiagonal() * spec.rotation.transpose();
  // Exact symmetry; the product above can differ in the last bit.
  spec.covariance = 0.5 * (spec.covariance + spec.covariance.transpose()).eval();
  spec.upsample = up(rng);
  spec.n_points = kDefaultMaskPoints;
  spec.seed = seed;
  return spec;
}

void validate(const GaussianMaskSpec &spec) {
  const Eigen::Matrix3d &s = spec.covariance;
  if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * s.cwiseAbs().maxCoeff())
    throw Error("mask covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw Error("mask covariance must be positive-definite");
  if (!(spec.upsample >= 1.0 && spec.upsample <= kMaxUpsample))
    throw Error("mask upsample factor must lie in [1, 4]");
}

RefinementMask realize_mask(const GaussianMaskSpec &spec, const BrainMask &brain) {
  validate(spec);
  const Dims &d = brain.dims();
  RefinementMask mask(d);
  Eigen::LLT<Eigen::Matrix3d> llt(spec.covariance);
  const Eigen::Matrix3d l = llt.matrixL();
  Rng rng = make_rng(spec.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < spec.n_points; ++n) {
    const Eigen::Vector3d z{normal(rng), normal(rng), normal(rng)};
    const Eigen::Vector3d p = spec.center + spec.upsample * (l * z);
    const double rx = std::round(p.x()), ry = std::round(p.y()), rz = std::round(p.z());
    if (rx < 0 || ry < 0 || rz < 0 || rx >= static_cast<double>(d.nx) ||
        ry >= static_cast<double>(d.ny) || rz >= static_cast<double>(d.nz))
      continue;
    const std::size_t i = static_cast<std::size_t>(rx) +
                          d.nx * (static_cast<std::size_t>(ry) + d.ny * static_cast<std::size_t>(rz));
    if (brain[i])
      mask.set(i);
  }
  return mask;
}

} // namespace itermask
