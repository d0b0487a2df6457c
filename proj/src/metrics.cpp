#include "itermask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace itermask {

double anomaly_score_mask(const Mask &mask) { return static_cast<double>(mask.count()); }

double anomaly_score_error(const Volume &e, const BrainMask &brain) {
  if (!(e.dims() == brain.dims()))
    throw Error("anomaly_score_error: dims mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    if (brain[i]) {
      sum += e[i];
      ++n;
    }
  if (n == 0)
    throw Error("anomaly_score_error: empty brain mask");
  return sum / static_cast<double>(n);
}

// ---- detection -------------------------------------------------------------------

namespace {

struct Group {
  double threshold;
  long long pos;
  long long neg;
};

/// Tie groups in descending score order plus class totals.
std::vector<Group> tie_groups(const std::vector<DetectionSample> &samples, long long &P,
                              long long &N) {
  P = N = 0;
  for (const auto &s : samples) {
    if (!std::isfinite(s.score))
      throw Error("detection scores must be finite");
    if (s.label != 0 && s.label != 1)
      throw Error("detection labels must be 0 or 1");
    (s.label == 1 ? P : N) += 1;
  }
  if (P == 0 || N == 0)
    throw Error("ROC analysis needs both normal and anomalous samples");
  std::vector<DetectionSample> sorted = samples;
  std::sort(sorted.begin(), sorted.end(),
            [](const DetectionSample &a, const DetectionSample &b) { return a.score > b.score; });
  std::vector<Group> groups;
  for (const auto &s : sorted) {
    if (groups.empty() || groups.back().threshold != s.score)
      groups.push_back({s.score, 0, 0});
    (s.label == 1 ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

} // namespace

std::vector<RocPoint> roc_curve(const std::vector<DetectionSample> &samples) {
  long long P, N;
  const auto groups = tie_groups(samples, P, N);
  std::vector<RocPoint> out;
  long long tp = 0, fp = 0;
  for (const auto &g : groups) {
    tp += g.pos;
    fp += g.neg;
    out.push_back({g.threshold, static_cast<double>(tp) / static_cast<double>(P),
                   static_cast<double>(fp) / static_cast<double>(N),
                   static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return out;
}

OperatingPoint at_tpr(const std::vector<DetectionSample> &samples, double target_tpr) {
  const auto curve = roc_curve(samples);
  for (const auto &p : curve)
    if (p.tpr >= target_tpr - 1e-12)
      return {p.fpr, 1.0 - p.tpr};
  return {curve.back().fpr, 1.0 - curve.back().tpr};
}

DetectionReport roc_pr(const std::vector<DetectionSample> &samples) {
  long long P, N;
  const auto groups = tie_groups(samples, P, N);

  // Trapezoids over tie groups, accumulated in integers: each negative in a
  // group earns full credit for positives ranked above it and half credit for
  // tied positives.
  long long twice_u = 0, tp = 0, fp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (const auto &g : groups) {
    twice_u += g.neg * (2 * tp + g.pos);
    tp += g.pos;
    fp += g.neg;
    const double recall = static_cast<double>(tp) / static_cast<double>(P);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }

  DetectionReport r;
  r.auroc = static_cast<double>(twice_u) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  r.auprc = ap;
  const auto p80 = at_tpr(samples, 0.8), p90 = at_tpr(samples, 0.9);
  r.fpr80 = p80.fpr;
  r.fnr80 = p80.fnr;
  r.fpr90 = p90.fpr;
  r.fnr90 = p90.fnr;
  return r;
}

// ---- overlap -----------------------------------------------------------------------

OverlapReport overlap_metrics(const Mask &prediction, const Mask &truth) {
  if (!(prediction.dims() == truth.dims()))
    throw Error("overlap_metrics: dims mismatch");
  std::size_t tp = 0, np = 0, nt = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    np += prediction[i];
    nt += truth[i];
    tp += prediction[i] && truth[i];
  }
  OverlapReport r;
  if (np == 0 && nt == 0) {
    r.dsc = r.jaccard = r.sensitivity = r.precision = 1.0;
    r.flags.push_back("both_empty");
    return r;
  }
  const auto d = [](std::size_t a) { return static_cast<double>(a); };
  r.dsc = 2.0 * d(tp) / d(np + nt);
  r.jaccard = d(tp) / d(np + nt - tp);
  if (nt == 0)
    r.flags.push_back("truth_empty");
  else
    r.sensitivity = d(tp) / d(nt);
  if (np == 0)
    r.flags.push_back("prediction_empty");
  else
    r.precision = d(tp) / d(np);
  return r;
}

// ---- surface distance ----------------------------------------------------------------

Mask surface(const Mask &m) {
  const Dims &d = m.dims();
  Mask s(d);
  const std::size_t sy = d.nx, sz = d.nx * d.ny;
  for (std::size_t z = 0, i = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x, ++i) {
        if (!m[i])
          continue;
        const bool edge = x == 0 || x + 1 == d.nx || y == 0 || y + 1 == d.ny || z == 0 ||
                          z + 1 == d.nz;
        if (edge || !m[i - 1] || !m[i + 1] || !m[i - sy] || !m[i + sy] || !m[i - sz] ||
            !m[i + sz])
          s.set(i);
      }
  return s;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on a line with
/// sample positions q * step.
void edt_1d(std::vector<double> &f, double step, std::vector<std::size_t> &v,
            std::vector<double> &z, std::vector<double> &out) {
  const std::size_t n = f.size();
  v.resize(n);
  z.resize(n + 1);
  out.resize(n);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf)
      continue;
    const double pq = static_cast<double>(q) * step;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      any = true;
      continue;
    }
    auto intersect = [&](std::size_t r) {
      const double pr = static_cast<double>(r) * step;
      return ((f[q] + pq * pq) - (f[r] + pr * pr)) / (2.0 * (pq - pr));
    };
    // z[0] is -inf, so k never underflows.
    double s = intersect(v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any)
    return;
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double pq = static_cast<double>(q) * step;
    while (z[k + 1] < pq)
      ++k;
    const double pv = static_cast<double>(v[k]) * step;
    out[q] = (pq - pv) * (pq - pv) + f[v[k]];
  }
  f.swap(out);
}

} // namespace

std::vector<double> squared_distance_transform(const Mask &m, const Spacing &spacing) {
  const Dims &d = m.dims();
  std::vector<double> dist(m.size(), kInf);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i])
      dist[i] = 0.0;
  std::vector<double> line, out, z;
  std::vector<std::size_t> v;
  const std::array<std::size_t, 3> n{d.nx, d.ny, d.nz};
  const std::array<std::size_t, 3> stride{1, d.nx, d.nx * d.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t len = n[axis], st = stride[axis];
    line.resize(len);
    for (std::size_t base = 0; base < m.size(); ++base) {
      // Visit each line once: its first element has coordinate 0 on `axis`.
      if ((base / st) % len != 0)
        continue;
      for (std::size_t q = 0; q < len; ++q)
        line[q] = dist[base + q * st];
      edt_1d(line, spacing[axis], v, z, out);
      for (std::size_t q = 0; q < len; ++q)
        dist[base + q * st] = line[q];
    }
  }
  return dist;
}

double assd(const Mask &prediction, const Mask &truth, const Spacing &spacing) {
  if (!(prediction.dims() == truth.dims()))
    throw Error("assd: dims mismatch");
  if (prediction.empty() || truth.empty())
    throw Error("assd is undefined for an empty mask");
  const Mask sp = surface(prediction), st = surface(truth);
  const auto to_truth = squared_distance_transform(st, spacing);
  const auto to_pred = squared_distance_transform(sp, spacing);
  double sum_p = 0.0, sum_t = 0.0;
  std::size_t np = 0, nt = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]) {
      sum_p += std::sqrt(to_truth[i]);
      ++np;
    }
    if (st[i]) {
      sum_t += std::sqrt(to_pred[i]);
      ++nt;
    }
  }
  return (sum_p + sum_t) / static_cast<double>(np + nt);
}

PsnrResult psnr_region(const Volume &x, const Volume &x_pred, const Mask &region) {
  if (!(x.dims() == x_pred.dims()) || !(x.dims() == region.dims()))
    throw Error("psnr_region: dims mismatch");
  double lo = kInf, hi = -kInf, se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (region[i]) {
      lo = std::min(lo, static_cast<double>(x[i]));
      hi = std::max(hi, static_cast<double>(x[i]));
      const double diff = static_cast<double>(x_pred[i]) - x[i];
      se += diff * diff;
      ++n;
    }
  if (n == 0)
    throw Error("psnr_region: empty region");
  const double peak = hi - lo;
  if (!(peak > 0.0))
    throw Error("psnr_region: zero intensity range in region");
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(peak * peak / mse), false};
}

} // namespace itermask
