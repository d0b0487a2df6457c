#include "itermask/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "itermask/random.hpp"

namespace itermask {

std::array<double, 3> grid_center(const Dims &d) {
  return {(static_cast<double>(d.nx) - 1.0) / 2.0, (static_cast<double>(d.ny) - 1.0) / 2.0,
          (static_cast<double>(d.nz) - 1.0) / 2.0};
}

Mask ball(const Dims &d, std::array<double, 3> c, double radius) {
  Mask m(d);
  const double r2 = radius * radius;
  for (std::size_t z = 0, i = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x, ++i) {
        const double dx = static_cast<double>(x) - c[0], dy = static_cast<double>(y) - c[1],
                     dz = static_cast<double>(z) - c[2];
        if (dx * dx + dy * dy + dz * dz <= r2)
          m.set(i);
      }
  return m;
}

Phantom make_phantom(const PhantomSpec &spec, std::uint64_t seed) {
  const Dims &d = spec.dims;
  Phantom p{Volume(d), Volume(d), Mask(d), Mask(d)};
  const auto c = grid_center(d);
  const std::array<double, 3> semi{spec.brain_semi_axes[0] * static_cast<double>(d.nx),
                                   spec.brain_semi_axes[1] * static_cast<double>(d.ny),
                                   spec.brain_semi_axes[2] * static_cast<double>(d.nz)};

  Rng rng = make_rng(seed, 11);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> freq(-2, 2);
  struct Wave {
    std::array<double, 3> k;
    double phi;
  };
  // Smooth field: a few low-frequency plane waves.
  std::vector<Wave> low;
  for (int w = 0; w < 4; ++w) {
    std::array<double, 3> k{};
    do {
      k = {static_cast<double>(freq(rng)), static_cast<double>(freq(rng)),
           static_cast<double>(freq(rng))};
    } while (k[0] == 0 && k[1] == 0 && k[2] == 0);
    low.push_back({k, phase(rng)});
  }
  // Fine texture: periods of 3-4 voxels per axis.
  const std::array<double, 3> tex_period{3.3, 3.7, 3.1};
  const std::array<double, 3> tex_phase{phase(rng), phase(rng), phase(rng)};

  for (std::size_t z = 0, i = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x, ++i) {
        const std::array<double, 3> pos{static_cast<double>(x), static_cast<double>(y),
                                        static_cast<double>(z)};
        double r = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double u = (pos[a] - c[a]) / semi[a];
          r += u * u;
        }
        if (r > 1.0)
          continue;
        p.brain.set(i);
        double smooth = 0.0;
        for (const auto &w : low) {
          double arg = w.phi;
          for (int a = 0; a < 3; ++a)
            arg += 2.0 * std::numbers::pi * w.k[a] * pos[a] / static_cast<double>(d[a]);
          smooth += std::cos(arg);
        }
        double texture = 1.0;
        for (int a = 0; a < 3; ++a)
          texture *= std::sin(2.0 * std::numbers::pi * pos[a] / tex_period[a] + tex_phase[a]);
        p.clean[i] = static_cast<float>(1.0 + 0.08 * smooth + 0.1 * texture);
      }

  if (spec.lesion) {
    p.truth = ball(d, spec.lesion->center, spec.lesion->radius);
    if (!p.truth.subset_of(p.brain))
      throw Error("phantom lesion extends outside the brain");
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  Rng noise_rng = make_rng(seed, 12);
  for (std::size_t i = 0; i < p.observed.size(); ++i) {
    if (!p.brain[i])
      continue;
    double v = p.clean[i] + noise(noise_rng);
    if (p.truth[i])
      v += spec.lesion->offset;
    p.observed[i] = static_cast<float>(v);
  }
  return p;
}

} // namespace itermask
