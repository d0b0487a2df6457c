#include "itermask/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <thread>

#include "itermask/reconstruct.hpp"
#include "itermask/spectral.hpp"

namespace itermask {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
  case Stage::Config:
    return "config";
  case Stage::Load:
    return "load";
  case Stage::Preprocess:
    return "preprocess";
  case Stage::Guidance:
    return "guidance";
  case Stage::Threshold:
    return "threshold";
  case Stage::Refine:
    return "refine";
  case Stage::Evaluate:
    return "evaluate";
  case Stage::Output:
    return "output";
  }
  return "unknown";
}

int exit_code(Stage s) { return 2 + static_cast<int>(s); }

double effective_gamma(const PipelineConfig &c) {
  if (c.gamma)
    return *c.gamma;
  return c.mode == Mode::Detection ? kGammaDetection : kGammaSegmentation;
}

void validate(const PipelineConfig &c) {
  if (!(c.radius >= 0.0) || !std::isfinite(c.radius))
    throw Error("radius must be >= 0");
  if (!(effective_gamma(c) > 0.0) || !std::isfinite(effective_gamma(c)))
    throw Error("gamma must be > 0");
  if (c.tau_stop && (!(*c.tau_stop > 0.0) || !std::isfinite(*c.tau_stop)))
    throw Error("tau_stop must be a positive finite value");
  if (c.max_iters < 0)
    throw Error("max_iters must be >= 0");
  if (c.external_timeout_ms <= 0)
    throw Error("external_timeout_ms must be > 0");
  if (c.input.empty())
    throw Error("no input volume given");
}

namespace {

std::string mode_name(Mode m) { return m == Mode::Detection ? "detection" : "segmentation"; }

Mode parse_mode(const std::string &s) {
  if (s == "detection")
    return Mode::Detection;
  if (s == "segmentation")
    return Mode::Segmentation;
  throw Error("unknown mode '" + s + "' (detection|segmentation)");
}

template <class T> json opt(const std::optional<T> &v) { return v ? json(*v) : json(nullptr); }

} // namespace

json semantic_json(const PipelineConfig &c) {
  return json{{"input", c.input.string()},
              {"brain", c.brain.string()},
              {"truth", c.truth.string()},
              {"reconstructor", c.reconstructor},
              {"external_timeout_ms", c.external_timeout_ms},
              {"radius", c.radius},
              {"scale_radius", c.scale_radius},
              {"mode", mode_name(c.mode)},
              {"gamma", opt(c.gamma)},
              {"tau_stop", opt(c.tau_stop)},
              {"max_iters", c.max_iters},
              {"seed", c.seed},
              {"normalize", c.normalize},
              {"allow_anisotropic", c.allow_anisotropic}};
}

json to_json(const PipelineConfig &c) {
  json j = semantic_json(c);
  j["output"] = c.output.string();
  return j;
}

PipelineConfig config_from_json(const json &j, PipelineConfig c) {
  if (!j.is_object())
    throw Error("config must be a JSON object");
  for (const auto &[key, v] : j.items()) {
    if (key == "input")
      c.input = v.get<std::string>();
    else if (key == "brain")
      c.brain = v.get<std::string>();
    else if (key == "truth")
      c.truth = v.get<std::string>();
    else if (key == "output")
      c.output = v.get<std::string>();
    else if (key == "reconstructor")
      c.reconstructor = v.get<std::string>();
    else if (key == "external_timeout_ms")
      c.external_timeout_ms = v.get<int>();
    else if (key == "radius")
      c.radius = v.get<double>();
    else if (key == "scale_radius")
      c.scale_radius = v.get<bool>();
    else if (key == "mode")
      c.mode = parse_mode(v.get<std::string>());
    else if (key == "gamma")
      c.gamma = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else if (key == "tau_stop")
      c.tau_stop = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else if (key == "max_iters")
      c.max_iters = v.get<int>();
    else if (key == "seed")
      c.seed = v.get<std::uint64_t>();
    else if (key == "normalize")
      c.normalize = v.get<bool>();
    else if (key == "allow_anisotropic")
      c.allow_anisotropic = v.get<bool>();
    else
      throw Error("unknown config key '" + key + "'");
  }
  return c;
}

std::string config_hash(const PipelineConfig &c) {
  const std::string text = semantic_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t default_seed(std::uint64_t fallback) {
  const char *env = std::getenv("ITERMASK_SEED");
  if (!env || !*env)
    return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size())
      throw Error("");
    return v;
  } catch (...) {
    throw Error(std::string("ITERMASK_SEED is not an unsigned integer: ") + env);
  }
}

std::string provenance(const std::string &hash, std::uint64_t seed) {
  return json{{"config_hash", hash}, {"seed", seed}}.dump();
}

json curve_to_json(const ThresholdCurve &c) {
  json samples = json::array();
  for (const auto &s : c.samples)
    samples.push_back({{"t", s.t}, {"tau", s.tau}});
  json j{{"samples", samples},
         {"gamma", c.gamma},
         {"tau_stop", c.selection.tau_stop},
         {"method_used", to_string(c.selection.method_used)},
         {"stop_t", c.selection.stop_t},
         {"no_crossing", c.selection.no_crossing}};
  if (c.selection.fit) {
    j["fit"] = {{"a", c.selection.fit->a}, {"b", c.selection.fit->b},
                {"window", c.selection.fit->window}};
    j["r_squared"] = c.selection.fit->r_squared;
  } else {
    j["fit"] = nullptr;
    j["r_squared"] = nullptr;
  }
  if (!c.dice_trace.empty())
    j["dice_trace"] = c.dice_trace;
  return j;
}

json trace_to_json(const RefinementTrace &t) {
  json its = json::array();
  for (const auto &r : t.iterations)
    its.push_back({{"t", r.t},
                   {"masked_voxels", r.masked_voxels},
                   {"threshold_used", r.threshold_used},
                   {"mean_error_in_mask", r.mean_error_in_mask}});
  return json{{"iterations", its}, {"terminated_reason", to_string(t.terminated_reason)}};
}

json detection_to_json(const DetectionReport &r) {
  return json{{"auroc", r.auroc}, {"auprc", r.auprc}, {"fpr80", r.fpr80},
              {"fpr90", r.fpr90}, {"fnr80", r.fnr80}, {"fnr90", r.fnr90}};
}

SegmentationEval evaluate_segmentation(const Mask &pred, const Mask &truth, const Volume &x,
                                       const Volume &x_pred, const Mask &healthy) {
  SegmentationEval e;
  e.overlap = overlap_metrics(pred, truth);
  if (!pred.empty() && !truth.empty())
    e.assd_mm = assd(pred, truth, x.spacing());
  if (!healthy.empty())
    e.psnr = psnr_region(x, x_pred, healthy);
  return e;
}

json segmentation_to_json(const SegmentationEval &e) {
  json flags = e.overlap.flags;
  json j{{"dsc", e.overlap.dsc},
         {"sensitivity", e.overlap.sensitivity},
         {"precision", e.overlap.precision},
         {"jaccard", e.overlap.jaccard}};
  if (e.assd_mm)
    j["assd_mm"] = *e.assd_mm;
  else {
    j["assd_mm"] = nullptr;
    flags.push_back("assd_undefined");
  }
  if (!e.psnr) {
    j["psnr_db"] = nullptr;
    flags.push_back("psnr_region_empty");
  } else if (e.psnr->infinite) {
    j["psnr_db"] = std::numeric_limits<double>::max();
    flags.push_back("psnr_infinite");
  } else {
    j["psnr_db"] = e.psnr->value_db;
  }
  j["flags"] = flags;
  return j;
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out)
    throw IoError("write failed for " + path.string());
}

json read_json(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

double usable_tau_stop(double tau) {
  return tau > 0.0 ? tau : std::numeric_limits<double>::denorm_min();
}

namespace {

template <class F> auto staged(Stage s, F &&f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError &) {
    throw;
  } catch (const std::exception &e) {
    throw PipelineError(s, e.what());
  }
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig &cfg) {
  PipelineResult res;
  staged(Stage::Config, [&] { validate(cfg); });
  res.config_hash = config_hash(cfg);
  const std::string prov = provenance(res.config_hash, cfg.seed);

  struct Inputs {
    Volume x;
    BrainMask brain;
    std::optional<Mask> truth;
    ReconstructorKind kind;
  };
  Inputs in = staged(Stage::Load, [&] {
    Volume x = load_volume(cfg.input);
    BrainMask brain = cfg.brain.empty() ? derive_brain_mask(x) : load_mask(cfg.brain);
    if (!(brain.dims() == x.dims()))
      throw Error("brain mask dims " + to_string(brain.dims()) + " differ from input " +
                  to_string(x.dims()));
    std::optional<Mask> truth;
    if (!cfg.truth.empty()) {
      truth = load_mask(cfg.truth);
      if (!(truth->dims() == x.dims()))
        throw Error("truth mask dims differ from input");
    }
    ReconstructorKind kind = parse_reconstructor(cfg.reconstructor);
    if (auto *ext = std::get_if<recon::External>(&kind))
      ext->timeout = std::chrono::milliseconds(cfg.external_timeout_ms);
    return Inputs{std::move(x), std::move(brain), std::move(truth), std::move(kind)};
  });

  Volume x = staged(Stage::Preprocess, [&] {
    if (!cfg.allow_anisotropic)
      check_isotropic(in.x);
    if (in.brain.empty())
      throw Error("brain mask is empty");
    if (!cfg.normalize)
      return in.x;
    auto n = normalize_iterative_zscore(in.x, in.brain);
    res.normalization = n.report;
    // The oracle's clean reference must live in the same intensity space.
    if (auto *o = std::get_if<recon::PhantomOracle>(&in.kind)) {
      if (!(o->clean->dims() == in.x.dims()))
        throw Error("oracle volume dims differ from input");
      o->clean = std::make_shared<const Volume>(apply_normalization(*o->clean, in.brain, n.report));
    }
    return std::move(n.volume);
  });

  Volume guidance = staged(Stage::Guidance, [&] {
    const double r = cfg.scale_radius ? scaled_radius(cfg.radius, x.dims()) : cfg.radius;
    return high_frequency_image(x, HighPassSpec{r});
  });

  staged(Stage::Output, [&] {
    fs::create_directories(cfg.output);
    save_volume(x, cfg.output / "normalized.vol", prov);
    save_volume(guidance, cfg.output / "guidance.vol", prov);
  });

  staged(Stage::Threshold, [&] {
    if (cfg.tau_stop) {
      res.tau_stop = *cfg.tau_stop;
      return;
    }
    ThresholdCurve curve;
    curve.gamma = effective_gamma(cfg);
    ScanOptions so;
    so.seed = cfg.seed;
    if (in.truth) {
      so.truth = &*in.truth;
      so.dice_out = &curve.dice_trace;
    }
    curve.samples = scan_thresholds(x, in.brain, in.kind, guidance, so);
    curve.selection = select_tau_stop(curve.samples, curve.gamma);
    res.tau_stop = usable_tau_stop(curve.selection.tau_stop);
    res.curve = std::move(curve);
  });

  res.refinement = staged(Stage::Refine, [&] {
    RefineOptions ro;
    ro.tau_stop = res.tau_stop;
    ro.seed = cfg.seed;
    ro.max_iters = cfg.max_iters;
    return refine(x, in.brain, in.kind, guidance, ro);
  });

  res.report = staged(Stage::Evaluate, [&] {
    const auto &r = res.refinement;
    json rep{{"config_hash", res.config_hash},
             {"seed", cfg.seed},
             {"reconstructor", describe(in.kind)},
             {"detection_score", anomaly_score_mask(r.mask)},
             {"tau_stop", res.tau_stop},
             {"iterations", r.trace.iterations.size()},
             {"terminated_reason", to_string(r.trace.terminated_reason)}};
    if (res.curve)
      rep["method_used"] = to_string(res.curve->selection.method_used);
    if (in.truth) {
      if (in.truth->empty()) {
        rep["flags"] = json::array({"truth_empty"});
      } else {
        const Mask healthy = mask_minus(in.brain, *in.truth);
        const auto seg = evaluate_segmentation(r.mask, *in.truth, x, r.final_prediction, healthy);
        rep.update(segmentation_to_json(seg));
      }
    }
    return rep;
  });

  staged(Stage::Output, [&] {
    json stamp{{"config_hash", res.config_hash}, {"seed", cfg.seed}};
    if (res.curve) {
      json c = curve_to_json(*res.curve);
      c.update(stamp);
      write_json(cfg.output / "curve.json", c);
    } else {
      json c{{"tau_stop", res.tau_stop}, {"fixed", true}};
      c.update(stamp);
      write_json(cfg.output / "curve.json", c);
    }
    save_mask(res.refinement.mask, cfg.output / "mask.vol", x.spacing(), prov);
    json t = trace_to_json(res.refinement.trace);
    t.update(stamp);
    write_json(cfg.output / "trace.json", t);
    write_json(cfg.output / "report.json", res.report);
  });
  return res;
}

std::vector<int> run_batch(const std::vector<PipelineConfig> &configs, int jobs) {
  std::vector<int> codes(configs.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        run_pipeline(configs[i]);
      } catch (const PipelineError &e) {
        codes[i] = exit_code(e.stage());
        std::lock_guard lock(log);
        std::cerr << configs[i].input.string() << ": " << e.what() << '\n';
      } catch (const std::exception &e) {
        codes[i] = 1;
        std::lock_guard lock(log);
        std::cerr << configs[i].input.string() << ": " << e.what() << '\n';
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, jobs));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < std::min(n, configs.size()); ++i)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  return codes;
}

} // namespace itermask
