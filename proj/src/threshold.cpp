#include "itermask/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "itermask/refine.hpp"

namespace itermask {

std::string to_string(StopMethod m) {
  return m == StopMethod::TangentFit ? "tangent-fit" : "discrete-derivative";
}

namespace {

double dice(const Mask &a, const Mask &b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] && b[i];
  }
  if (na + nb == 0)
    return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

} // namespace

std::vector<ThresholdSample> scan_thresholds(const Volume &x, const BrainMask &brain,
                                             const ReconstructorKind &kind, const Volume &guidance,
                                             const ScanOptions &opts) {
  if (!(brain.dims() == x.dims()) || !(guidance.dims() == x.dims()))
    throw Error("scan_thresholds: dims mismatch");
  std::vector<std::size_t> masked = brain.indices();
  if (masked.empty())
    throw Error("scan_thresholds: empty brain mask");
  const auto k = static_cast<std::size_t>(
      std::ceil(kScanShrinkFraction * static_cast<double>(masked.size())));

  RefinementMask mask = brain;
  Rng rng = make_rng(opts.seed, 1);
  std::vector<ThresholdSample> samples;
  struct Entry {
    float e;
    std::size_t i;
  };
  std::vector<Entry> entries;
  for (int t = 1; !masked.empty(); ++t) {
    ReconstructionRequest req{noise_fill(x, mask, rng), guidance, mask, brain, t - 1};
    Volume pred;
    try {
      pred = reconstruct(kind, req);
    } catch (const Error &e) {
      throw ReconstructionError("threshold scan iteration " + std::to_string(t) + ": " + e.what());
    }
    const Volume err = error_map(x, pred);

    entries.clear();
    for (auto i : masked)
      entries.push_back({err[i], i});
    auto less = [](const Entry &a, const Entry &b) { return a.e < b.e || (a.e == b.e && a.i < b.i); };
    const std::size_t take = std::min(k, entries.size());
    std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(take - 1),
                     entries.end(), less);
    const Entry kth = entries[take - 1];
    samples.push_back({t, static_cast<double>(kth.e)});
    for (std::size_t j = 0; j < entries.size(); ++j)
      if (less(entries[j], kth) || (entries[j].e == kth.e && entries[j].i == kth.i))
        mask.set(entries[j].i, false);
    std::erase_if(masked, [&](std::size_t i) { return !mask[i]; });
    if (opts.truth && opts.dice_out)
      opts.dice_out->push_back(dice(mask, *opts.truth));
  }
  return samples;
}

namespace {

struct WindowData {
  std::vector<double> t, y;
};

WindowData fit_window(const std::vector<ThresholdSample> &samples) {
  WindowData w;
  const std::size_t n = std::min(kFitWindow, samples.size());
  for (std::size_t j = 0; j < n; ++j) {
    w.t.push_back(static_cast<double>(samples[j].t));
    w.y.push_back(samples[j].tau);
  }
  return w;
}

/// Optimal a for fixed b and the resulting residual sum of squares.
std::pair<double, double> solve_for_b(const WindowData &w, double b) {
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < w.t.size(); ++j) {
    const double tn = std::tan(b * w.t[j]);
    num += w.y[j] * tn;
    den += tn * tn;
  }
  const double a = den > 0.0 ? num / den : 0.0;
  double ss = 0.0;
  for (std::size_t j = 0; j < w.t.size(); ++j) {
    const double r = w.y[j] - a * std::tan(b * w.t[j]);
    ss += r * r;
  }
  return {a, ss};
}

} // namespace

TangentFit fit_tangent(const std::vector<ThresholdSample> &samples) {
  if (samples.size() < kMinFitSamples)
    throw Error("fit_tangent: need at least " + std::to_string(kMinFitSamples) + " samples");
  const WindowData w = fit_window(samples);
  double t_max = 0.0;
  for (std::size_t j = 0; j < w.t.size(); ++j) {
    if (j > 0 && !(w.t[j] > w.t[j - 1]))
      throw Error("fit_tangent: t must be strictly increasing");
    if (!(w.t[j] > 0.0))
      throw Error("fit_tangent: t must start from 1");
    t_max = std::max(t_max, w.t[j]);
  }

  // The pole of tan(b t) must stay beyond the fitted window.
  const double hi = std::numbers::pi / (2.0 * t_max);
  constexpr int kGrid = 512;
  auto b_at = [&](int j) { return hi * static_cast<double>(j) / (kGrid + 1); };
  int best = 1;
  double best_ss = solve_for_b(w, b_at(1)).second;
  for (int j = 2; j <= kGrid; ++j) {
    const double ss = solve_for_b(w, b_at(j)).second;
    if (ss < best_ss) {
      best_ss = ss;
      best = j;
    }
  }

  double lo = b_at(best - 1) > 0.0 ? b_at(best - 1) : hi * 1e-9;
  double up = b_at(best + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = up - inv_phi * (up - lo), d = lo + inv_phi * (up - lo);
  double fc = solve_for_b(w, c).second, fd = solve_for_b(w, d).second;
  while (up - lo > 1e-6 * 0.5 * (up + lo)) {
    if (fc < fd) {
      up = d;
      d = c;
      fd = fc;
      c = up - inv_phi * (up - lo);
      fc = solve_for_b(w, c).second;
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (up - lo);
      fd = solve_for_b(w, d).second;
    }
  }
  double b = 0.5 * (lo + up);
  auto [a, ss_res] = solve_for_b(w, b);
  if (best_ss < ss_res) {
    b = b_at(best);
    std::tie(a, ss_res) = solve_for_b(w, b);
  }

  double mean = 0.0;
  for (double y : w.y)
    mean += y;
  mean /= static_cast<double>(w.y.size());
  double ss_tot = 0.0;
  for (double y : w.y)
    ss_tot += (y - mean) * (y - mean);
  // The rounded mean of equal values can leave a spurious residue.
  if (std::all_of(w.y.begin(), w.y.end(), [&](double y) { return y == w.y.front(); }))
    ss_tot = 0.0;

  TangentFit fit{a, b, 0.0, w.t.size()};
  if (ss_tot == 0.0) {
    if (ss_res != 0.0)
      throw DegenerateFitError("fit_tangent: constant samples cannot be fitted by a tangent curve");
    fit.r_squared = 1.0;
  } else {
    fit.r_squared = 1.0 - ss_res / ss_tot;
  }
  return fit;
}

std::vector<double> smoothed_derivative(const std::vector<ThresholdSample> &samples, int window) {
  if (samples.size() < 2)
    return {};
  const std::size_t n = samples.size() - 1;
  std::vector<double> diff(n);
  for (std::size_t j = 0; j < n; ++j)
    diff[j] = samples[j + 1].tau - samples[j].tau;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(j) - half);
    const std::ptrdiff_t hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, static_cast<std::ptrdiff_t>(j) + half);
    double s = 0.0;
    for (std::ptrdiff_t q = lo; q <= hi; ++q)
      s += diff[static_cast<std::size_t>(q)];
    out[j] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

namespace {

/// Smallest integer t >= 1 with a b sec^2(b t) > gamma and b t < pi/2.
std::optional<int> first_tangent_crossing(double a, double b, double gamma) {
  if (!(a > 0.0) || !(b > 0.0))
    return std::nullopt;
  const double pole = std::numbers::pi / (2.0 * b);
  auto deriv = [&](double t) {
    const double c = std::cos(b * t);
    return a * b / (c * c);
  };
  auto valid = [&](double t) { return b * t < std::numbers::pi / 2.0; };
  double t;
  if (a * b > gamma) {
    t = 1.0;
  } else {
    const double tc = std::acos(std::sqrt(a * b / gamma)) / b;
    t = std::max(1.0, std::floor(tc) + 1.0);
    while (t > 1.0 && deriv(t - 1.0) > gamma)
      t -= 1.0;
    while (valid(t) && !(deriv(t) > gamma))
      t += 1.0;
  }
  if (!valid(t) || t >= pole || !(deriv(t) > gamma) || t > 1e9)
    return std::nullopt;
  return static_cast<int>(t);
}

StopSelection fallback(const std::vector<ThresholdSample> &samples, double gamma,
                       std::optional<TangentFit> fit) {
  StopSelection sel;
  sel.method_used = StopMethod::DiscreteDerivative;
  sel.fit = fit;
  const auto s = smoothed_derivative(samples);
  for (std::size_t j = 0; j < s.size(); ++j)
    if (s[j] > gamma) {
      sel.tau_stop = samples[j].tau;
      sel.stop_t = samples[j].t;
      return sel;
    }
  sel.no_crossing = true;
  sel.tau_stop = samples.back().tau;
  sel.stop_t = samples.back().t;
  return sel;
}

} // namespace

StopSelection select_tau_stop(const std::vector<ThresholdSample> &samples, double gamma) {
  if (!(gamma > 0.0))
    throw Error("select_tau_stop: gamma must be > 0");
  TangentFit fit;
  try {
    fit = fit_tangent(samples);
  } catch (const DegenerateFitError &) {
    // A constant curve is not tangent-shaped; fall back rather than fail.
    return fallback(samples, gamma, std::nullopt);
  }
  if (fit.r_squared < kMinRSquared)
    return fallback(samples, gamma, fit);

  StopSelection sel;
  sel.method_used = StopMethod::TangentFit;
  sel.fit = fit;
  if (auto t = first_tangent_crossing(fit.a, fit.b, gamma)) {
    sel.stop_t = *t;
    sel.tau_stop = fit.a * std::tan(fit.b * *t);
  } else {
    sel.no_crossing = true;
    sel.tau_stop = samples.back().tau;
    sel.stop_t = samples.back().t;
  }
  return sel;
}

} // namespace itermask
