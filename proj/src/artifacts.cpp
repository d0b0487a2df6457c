#include "itermask/artifacts.hpp"

#include <algorithm>
#include <cmath>

#include "itermask/random.hpp"
#include "itermask/spectral.hpp"

namespace itermask {

namespace {

void check_axis(int axis) {
  if (axis < 0 || axis > 2)
    throw Error("artifact axis must be 0, 1 or 2");
}

std::size_t coord(const Volume &v, std::size_t i, int axis) { return v.coords(i)[axis]; }

} // namespace

std::string artifact_name(const ArtifactSpec &spec) {
  static const char *names[] = {"chunk",    "gaussian", "spike",        "bias",
                                "ghosting", "zipper",   "sequence-swap"};
  return names[spec.index()];
}

void validate(const ArtifactSpec &spec) {
  std::visit(
      [](const auto &s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, artifact::Chunk>) {
          check_axis(s.axis);
        } else if constexpr (std::is_same_v<T, artifact::GaussianKSpace>) {
          if (!(s.sigma >= 0.0))
            throw Error("gaussian sigma must be >= 0");
        } else if constexpr (std::is_same_v<T, artifact::Spike>) {
          if (!(s.sigma >= 0.0))
            throw Error("spike sigma must be >= 0");
          for (const auto &k : s.locations)
            for (double c : k)
              if (!(c >= -1.0 && c <= 1.0))
                throw Error("spike locations must lie in [-1, 1]^3");
        } else if constexpr (std::is_same_v<T, artifact::BiasField>) {
          if (s.coefficients.size() != kBiasCoefficientCount)
            throw Error("bias field needs 20 coefficients (all i + j + k <= 3)");
        } else if constexpr (std::is_same_v<T, artifact::Ghosting>) {
          check_axis(s.axis);
          if (s.period < 1)
            throw Error("ghosting period must be >= 1");
          if (!(s.alpha >= 0.0 && s.alpha <= 1.0))
            throw Error("ghosting alpha must lie in [0, 1]");
        } else if constexpr (std::is_same_v<T, artifact::Zipper>) {
          check_axis(s.axis);
          if (s.height < 1)
            throw Error("zipper height must be >= 1");
        }
      },
      spec);
}

// ---- chunk ----------------------------------------------------------------------

Corruption apply_chunk(const Volume &v, const artifact::Chunk &spec) {
  validate(spec);
  const std::size_t extent = v.dims()[spec.axis];
  if (spec.width > extent)
    throw Error("chunk width " + std::to_string(spec.width) + " exceeds axis extent " +
                std::to_string(extent));
  Corruption out{v, Mask(v.dims())};
  if (spec.width == 0)
    return out;

  const Mask brain = derive_brain_mask(v);
  long long first = 0;
  if (brain.empty()) {
    first = static_cast<long long>((extent - spec.width) / 2);
  } else if (spec.position == artifact::ChunkPosition::Top) {
    std::size_t top = 0;
    for (std::size_t i = 0; i < brain.size(); ++i)
      if (brain[i])
        top = std::max(top, coord(v, i, spec.axis));
    first = static_cast<long long>(top) + 1 - static_cast<long long>(spec.width);
  } else {
    const long long c = std::llround(centroid(brain)[spec.axis]);
    first = c - static_cast<long long>(spec.width / 2);
  }
  first = std::clamp<long long>(first, 0, static_cast<long long>(extent - spec.width));
  const auto lo = static_cast<std::size_t>(first), hi = lo + spec.width;

  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = coord(v, i, spec.axis);
    if (c >= lo && c < hi) {
      out.volume[i] = 0.0f;
      if (brain[i])
        out.truth.set(i);
    }
  }
  return out;
}

// ---- k-space artifacts -------------------------------------------------------------

Volume apply_gaussian_kspace(const Volume &v, const artifact::GaussianKSpace &spec,
                             std::uint64_t seed) {
  validate(spec);
  SpectralField k = dft_forward(v);
  double max_re = 0.0, max_im = 0.0;
  for (const auto &c : k.coeffs) {
    max_re = std::max(max_re, std::fabs(c.real()));
    max_im = std::max(max_im, std::fabs(c.imag()));
  }
  const double bound_re = spec.sigma * max_re, bound_im = spec.sigma * max_im;
  // One (real, imag) pair of U(-1, 1) draws per coefficient, in index order.
  Rng rng = make_rng(seed, 3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto &c : k.coeffs) {
    const double ur = unit(rng);
    const double ui = unit(rng);
    c += std::complex<double>(bound_re * ur, bound_im * ui);
  }
  return dft_inverse_real_part(k);
}

std::size_t spike_index(double k, std::size_t n) {
  const auto n_ll = static_cast<long long>(n);
  const long long off = std::llround(k * static_cast<double>(n) / 2.0);
  return static_cast<std::size_t>(((off % n_ll) + n_ll) % n_ll);
}

std::vector<std::array<double, 3>> random_spike_locations(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 4);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::array<double, 3>> out(n);
  for (auto &k : out)
    for (auto &c : k)
      c = unit(rng);
  return out;
}

Volume apply_spike(const Volume &v, const artifact::Spike &spec) {
  validate(spec);
  SpectralField k = dft_forward(v);
  double max_abs = 0.0;
  for (const auto &c : k.coeffs)
    max_abs = std::max(max_abs, std::abs(c));
  const Dims &d = v.dims();
  for (const auto &loc : spec.locations) {
    const std::size_t i = spike_index(loc[0], d.nx) +
                          d.nx * (spike_index(loc[1], d.ny) + d.ny * spike_index(loc[2], d.nz));
    k.coeffs[i] += spec.sigma * max_abs;
  }
  return dft_inverse_real_part(k);
}

Volume apply_ghosting(const Volume &v, const artifact::Ghosting &spec) {
  validate(spec);
  SpectralField k = dft_forward(v);
  const double keep = 1.0 - spec.alpha;
  for (std::size_t i = 0; i < k.coeffs.size(); ++i)
    if (coord(v, i, spec.axis) % spec.period == 0)
      k.coeffs[i] *= keep;
  return dft_inverse_real_part(k);
}

// ---- bias field ----------------------------------------------------------------------

std::vector<std::array<int, 3>> bias_exponents() {
  std::vector<std::array<int, 3>> out;
  for (int i = 0; i <= 3; ++i)
    for (int j = 0; j <= 3 - i; ++j)
      for (int k = 0; k <= 3 - i - j; ++k)
        out.push_back({i, j, k});
  return out;
}

Volume apply_bias_field(const Volume &v, const artifact::BiasField &spec) {
  validate(spec);
  const auto exps = bias_exponents();
  const Dims &d = v.dims();
  auto norm = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  Volume out = v;
  for (std::size_t z = 0, idx = 0; z < d.nz; ++z) {
    const double zn = norm(z, d.nz);
    for (std::size_t y = 0; y < d.ny; ++y) {
      const double yn = norm(y, d.ny);
      for (std::size_t x = 0; x < d.nx; ++x, ++idx) {
        const double xn = norm(x, d.nx);
        const std::array<double, 4> px{1.0, xn, xn * xn, xn * xn * xn};
        const std::array<double, 4> py{1.0, yn, yn * yn, yn * yn * yn};
        const std::array<double, 4> pz{1.0, zn, zn * zn, zn * zn * zn};
        double poly = 0.0;
        for (std::size_t c = 0; c < exps.size(); ++c)
          poly += spec.coefficients[c] * px[exps[c][0]] * py[exps[c][1]] * pz[exps[c][2]];
        out[idx] = static_cast<float>(static_cast<double>(v[idx]) * std::exp(poly));
      }
    }
  }
  return out;
}

// ---- zipper ------------------------------------------------------------------------

double masked_percentile(const Volume &v, const Mask &m, double pct) {
  std::vector<float> vals;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (m[i])
      vals.push_back(v[i]);
  if (vals.empty())
    throw Error("percentile of an empty region");
  std::sort(vals.begin(), vals.end());
  const double rank = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(vals.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, vals.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return vals[lo] + frac * (static_cast<double>(vals[hi]) - vals[lo]);
}

Corruption apply_zipper(const Volume &v, const artifact::Zipper &spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t extent = v.dims()[spec.axis];
  if (spec.height > extent)
    throw Error("zipper height exceeds axis extent");
  Corruption out{v, Mask(v.dims())};
  if (spec.strips == 0)
    return out;
  const Mask brain = derive_brain_mask(v);
  if (brain.empty())
    return out;

  Rng rng = make_rng(seed, 5);
  std::uniform_int_distribution<std::size_t> start(0, extent - spec.height);
  std::vector<std::uint8_t> band(extent, 0);
  for (std::size_t s = 0; s < spec.strips; ++s) {
    const std::size_t y0 = start(rng);
    std::fill(band.begin() + static_cast<std::ptrdiff_t>(y0),
              band.begin() + static_cast<std::ptrdiff_t>(y0 + spec.height), 1);
  }

  const auto amplitude = static_cast<float>(masked_percentile(v, brain, 99.0));
  const int fast = spec.axis == 0 ? 1 : 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!brain[i] || !band[coord(v, i, spec.axis)])
      continue;
    out.volume[i] = coord(v, i, fast) % 2 == 0 ? amplitude : -amplitude;
    out.truth.set(i);
  }
  return out;
}

// ---- dispatch ------------------------------------------------------------------------

Corruption apply_artifact(const Volume &v, const ArtifactSpec &spec, std::uint64_t seed) {
  struct {
    const Volume &v;
    std::uint64_t seed;
    Corruption global(Volume out) const { return {std::move(out), Mask(v.dims())}; }
    Corruption operator()(const artifact::Chunk &s) const { return apply_chunk(v, s); }
    Corruption operator()(const artifact::GaussianKSpace &s) const {
      return global(apply_gaussian_kspace(v, s, seed));
    }
    Corruption operator()(const artifact::Spike &s) const { return global(apply_spike(v, s)); }
    Corruption operator()(const artifact::BiasField &s) const {
      return global(apply_bias_field(v, s));
    }
    Corruption operator()(const artifact::Ghosting &s) const {
      return global(apply_ghosting(v, s));
    }
    Corruption operator()(const artifact::Zipper &s) const { return apply_zipper(v, s, seed); }
    Corruption operator()(const artifact::SequenceSwap &) const { return global(v); }
  } visitor{v, seed};
  return std::visit(visitor, spec);
}

ArtifactSpec with_severity(const ArtifactSpec &spec, double severity) {
  ArtifactSpec out = spec;
  std::visit(
      [severity](auto &s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, artifact::Chunk>)
          s.width = static_cast<std::size_t>(std::llround(std::max(0.0, severity)));
        else if constexpr (std::is_same_v<T, artifact::GaussianKSpace> ||
                           std::is_same_v<T, artifact::Spike>)
          s.sigma = severity;
        else if constexpr (std::is_same_v<T, artifact::BiasField>)
          std::fill(s.coefficients.begin(), s.coefficients.end(), severity);
        else if constexpr (std::is_same_v<T, artifact::Ghosting>)
          s.alpha = severity;
        else if constexpr (std::is_same_v<T, artifact::Zipper>)
          s.strips = static_cast<std::size_t>(std::llround(std::max(0.0, severity)));
      },
      out);
  return out;
}

std::vector<SweepItem> severity_sweep(const Volume &v, const ArtifactSpec &spec,
                                      const std::vector<double> &grid, std::uint64_t seed) {
  if (grid.empty())
    throw Error("severity sweep needs a nonempty grid");
  std::vector<SweepItem> out;
  out.reserve(grid.size());
  for (double s : grid)
    out.push_back({s, apply_artifact(v, with_severity(spec, s), seed)});
  return out;
}

} // namespace itermask
