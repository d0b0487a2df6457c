#include "itermask/refine.hpp"

#include <cmath>

namespace itermask {

Volume error_map(const Volume &x, const Volume &x_pred) {
  if (!(x.dims() == x_pred.dims()))
    throw Error("error_map: dims mismatch");
  Volume e(x.dims(), x.spacing());
  for (std::size_t i = 0; i < e.size(); ++i)
    e[i] = std::fabs(x_pred[i] - x[i]);
  return e;
}

RefinementMask update_mask(const Volume &e, double tau, const BrainMask &brain) {
  if (std::isnan(tau))
    throw Error("update_mask: tau must not be NaN");
  if (!(e.dims() == brain.dims()))
    throw Error("update_mask: dims mismatch");
  RefinementMask m(e.dims());
  for (std::size_t i = 0; i < e.size(); ++i)
    if (brain[i] && !(static_cast<double>(e[i]) < tau))
      m.set(i);
  return m;
}

Volume noise_fill(const Volume &x, const RefinementMask &mask, Rng &rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Volume out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float eps = normal(rng);
    if (mask[i])
      out[i] = eps;
  }
  return out;
}

std::string to_string(TerminationReason r) {
  switch (r) {
  case TerminationReason::Converged:
    return "converged";
  case TerminationReason::MaxIters:
    return "max_iters";
  case TerminationReason::MaskEmpty:
    return "mask_empty";
  }
  return "unknown";
}

RefinementResult refine(const Volume &x, const BrainMask &brain, const ReconstructorKind &kind,
                        const Volume &guidance, const RefineOptions &opts) {
  if (!(opts.tau_stop > 0.0) || !std::isfinite(opts.tau_stop))
    throw Error("refine: tau_stop must be a positive finite value");
  if (!(guidance.dims() == x.dims()) || !(brain.dims() == x.dims()))
    throw Error("refine: input, guidance and brain dims must match");
  if (opts.max_iters < 0)
    throw Error("refine: max_iters must be >= 0");

  RefinementResult res{brain, {}, Volume(x.dims(), x.spacing()), x};
  Rng rng = make_rng(opts.seed, 1);
  std::size_t current = res.mask.count();
  if (current == 0) {
    res.trace.terminated_reason = TerminationReason::MaskEmpty;
    return res;
  }

  res.trace.terminated_reason = TerminationReason::MaxIters;
  for (int t = 0; t < opts.max_iters; ++t) {
    ReconstructionRequest req{noise_fill(x, res.mask, rng), guidance, res.mask, brain, t};
    Volume pred;
    try {
      pred = reconstruct(kind, req);
    } catch (const Error &e) {
      throw ReconstructionError("refine iteration " + std::to_string(t) + ": " + e.what());
    }
    Volume err = error_map(x, pred);

    double sum = 0.0;
    for (std::size_t i = 0; i < err.size(); ++i)
      if (res.mask[i])
        sum += err[i];
    const double mean_in_mask = sum / static_cast<double>(current);

    RefinementMask next = update_mask(err, opts.tau_stop, brain);
    const std::size_t next_count = next.count();
    res.trace.iterations.push_back({t, next_count, opts.tau_stop, mean_in_mask});
    res.final_error = std::move(err);
    res.final_prediction = std::move(pred);
    res.mask = std::move(next);

    const double change = std::fabs(static_cast<double>(next_count) - static_cast<double>(current)) /
                          static_cast<double>(current);
    current = next_count;
    if (current == 0) {
      res.trace.terminated_reason = TerminationReason::MaskEmpty;
      break;
    }
    if (change < kShrinkStopFraction) {
      res.trace.terminated_reason = TerminationReason::Converged;
      break;
    }
  }
  return res;
}

} // namespace itermask
