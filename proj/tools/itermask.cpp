#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "itermask/artifacts.hpp"
#include "itermask/maskgen.hpp"
#include "itermask/phantom.hpp"
#include "itermask/pipeline.hpp"
#include "itermask/spectral.hpp"

using namespace itermask;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class F> auto stage(Stage s, F &&fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError &) {
    throw;
  } catch (const std::exception &e) {
    throw PipelineError(s, e.what());
  }
}

Mask brain_or_derived(const std::string &path, const Volume &x) {
  if (path.empty())
    return derive_brain_mask(x);
  Mask m = load_mask(path);
  if (!(m.dims() == x.dims()))
    throw Error("brain mask dims " + to_string(m.dims()) + " differ from input " +
                to_string(x.dims()));
  return m;
}

ReconstructorKind load_reconstructor(const std::string &text, int timeout_ms) {
  ReconstructorKind k = parse_reconstructor(text);
  if (auto *ext = std::get_if<recon::External>(&k))
    ext->timeout = std::chrono::milliseconds(timeout_ms);
  return k;
}

std::string stamp(std::uint64_t seed, const std::string &what) {
  json j{{"command", what}, {"seed", seed}};
  return j.dump();
}

// ---- subcommands ----------------------------------------------------------------

struct NormalizeArgs {
  std::string in, out, brain, report;
  bool allow_anisotropic = false;
};

void cmd_normalize(const NormalizeArgs &a) {
  const Volume x = stage(Stage::Load, [&] { return load_volume(a.in); });
  const Mask brain = stage(Stage::Load, [&] { return brain_or_derived(a.brain, x); });
  const auto n = stage(Stage::Preprocess, [&] {
    if (!a.allow_anisotropic)
      check_isotropic(x);
    return normalize_iterative_zscore(x, brain);
  });
  stage(Stage::Output, [&] {
    save_volume(n.volume, a.out);
    if (!a.report.empty())
      write_json(a.report, json{{"passes", n.report.passes},
                                {"mean_history", n.report.mean_history},
                                {"std_history", n.report.std_history},
                                {"offset", n.report.offset},
                                {"scale", n.report.scale}});
  });
}

struct HpArgs {
  std::string in, out;
  double radius = kDefaultHighPassRadius;
  bool scale_radius = false;
};

void cmd_hp_filter(const HpArgs &a) {
  const Volume x = stage(Stage::Load, [&] { return load_volume(a.in); });
  const Volume g = stage(Stage::Guidance, [&] {
    const double r = a.scale_radius ? scaled_radius(a.radius, x.dims()) : a.radius;
    return high_frequency_image(x, {r});
  });
  stage(Stage::Output, [&] { save_volume(g, a.out); });
}

struct GenmaskArgs {
  std::string brain, out;
  std::uint64_t seed = 0;
};

void cmd_genmask(const GenmaskArgs &a) {
  const Mask brain = stage(Stage::Load, [&] { return load_mask(a.brain); });
  const Mask m = stage(Stage::Preprocess, [&] {
    return realize_mask(sample_mask_spec(brain, a.seed), brain);
  });
  stage(Stage::Output, [&] { save_mask(m, a.out, {}, stamp(a.seed, "genmask")); });
}

struct CorruptArgs {
  std::string artifact, in, out, gt, manifest;
  std::uint64_t seed = 0;
  std::optional<double> sigma, alpha;
  std::optional<std::size_t> width, strips, period, height, spikes;
  std::optional<int> axis;
  std::string position = "top";
  std::vector<double> coef, location, sweep;
};

ArtifactSpec build_artifact(const CorruptArgs &a) {
  const std::string &k = a.artifact;
  if (k == "chunk") {
    artifact::Chunk s;
    s.width = a.width.value_or(s.width);
    s.axis = a.axis.value_or(s.axis);
    if (a.position == "top")
      s.position = artifact::ChunkPosition::Top;
    else if (a.position == "middle")
      s.position = artifact::ChunkPosition::Middle;
    else
      throw Error("chunk position must be top or middle");
    return s;
  }
  if (k == "gaussian")
    return artifact::GaussianKSpace{a.sigma.value_or(0.2)};
  if (k == "spike") {
    artifact::Spike s;
    s.sigma = a.sigma.value_or(s.sigma);
    if (!a.location.empty()) {
      if (a.location.size() % 3 != 0)
        throw Error("--location takes triples x,y,z");
      s.locations.clear();
      for (std::size_t i = 0; i < a.location.size(); i += 3)
        s.locations.push_back({a.location[i], a.location[i + 1], a.location[i + 2]});
    } else if (a.spikes) {
      s.locations = random_spike_locations(*a.spikes, a.seed);
    }
    return s;
  }
  if (k == "bias") {
    artifact::BiasField s;
    if (a.coef.size() == 1)
      s.coefficients.assign(kBiasCoefficientCount, a.coef[0]);
    else if (!a.coef.empty())
      s.coefficients = a.coef;
    return s;
  }
  if (k == "ghosting") {
    artifact::Ghosting s;
    s.period = a.period.value_or(s.period);
    s.alpha = a.alpha.value_or(s.alpha);
    s.axis = a.axis.value_or(s.axis);
    return s;
  }
  if (k == "zipper") {
    artifact::Zipper s;
    s.strips = a.strips.value_or(s.strips);
    s.height = a.height.value_or(s.height);
    s.axis = a.axis.value_or(s.axis);
    return s;
  }
  if (k == "sequence-swap")
    return artifact::SequenceSwap{};
  throw Error("unknown artifact '" + k + "'");
}

fs::path with_suffix(const fs::path &p, const std::string &suffix) {
  return p.parent_path() / (p.stem().string() + suffix + p.extension().string());
}

void cmd_corrupt(const CorruptArgs &a) {
  const ArtifactSpec spec = stage(Stage::Config, [&] {
    ArtifactSpec s = build_artifact(a);
    validate(s);
    return s;
  });
  const Volume x = stage(Stage::Load, [&] { return load_volume(a.in); });
  json meta{{"artifact", artifact_name(spec)}, {"seed", a.seed}};

  if (a.sweep.empty()) {
    const Corruption c = stage(Stage::Preprocess, [&] { return apply_artifact(x, spec, a.seed); });
    stage(Stage::Output, [&] {
      save_volume(c.volume, a.out, meta.dump());
      if (!a.gt.empty())
        save_mask(c.truth, a.gt, x.spacing(), meta.dump());
    });
    return;
  }
  const auto items = stage(Stage::Preprocess, [&] { return severity_sweep(x, spec, a.sweep, a.seed); });
  stage(Stage::Output, [&] {
    json manifest = json::array();
    for (std::size_t j = 0; j < items.size(); ++j) {
      const std::string tag = "_s" + std::to_string(j);
      json m = meta;
      m["severity"] = items[j].severity;
      const fs::path vol = with_suffix(a.out, tag);
      save_volume(items[j].result.volume, vol, m.dump());
      json entry{{"severity", items[j].severity}, {"output", vol.string()}};
      if (!a.gt.empty()) {
        const fs::path gt = with_suffix(a.gt, tag);
        save_mask(items[j].result.truth, gt, x.spacing(), m.dump());
        entry["gt"] = gt.string();
      }
      manifest.push_back(entry);
    }
    write_json(a.manifest.empty() ? with_suffix(a.out, "_manifest").replace_extension(".json")
                                  : fs::path(a.manifest),
               json{{"artifact", artifact_name(spec)}, {"seed", a.seed}, {"items", manifest}});
  });
}

struct PhantomArgs {
  std::string out_dir;
  std::vector<std::size_t> dims{64, 64, 64};
  double noise = 0.1;
  std::optional<double> lesion_radius;
  std::vector<double> lesion_center;
  double offset = 4.0;
  std::uint64_t seed = 0;
};

void cmd_phantom(const PhantomArgs &a) {
  const Phantom p = stage(Stage::Config, [&] {
    if (a.dims.size() != 3)
      throw Error("--dims takes nx,ny,nz");
    PhantomSpec spec;
    spec.dims = {a.dims[0], a.dims[1], a.dims[2]};
    spec.noise_std = a.noise;
    if (a.lesion_radius) {
      LesionSpec l;
      l.radius = *a.lesion_radius;
      l.offset = a.offset;
      if (a.lesion_center.empty())
        l.center = grid_center(spec.dims);
      else if (a.lesion_center.size() == 3)
        l.center = {a.lesion_center[0], a.lesion_center[1], a.lesion_center[2]};
      else
        throw Error("--lesion-center takes x,y,z");
      spec.lesion = l;
    }
    return make_phantom(spec, a.seed);
  });
  stage(Stage::Output, [&] {
    const fs::path d = a.out_dir;
    fs::create_directories(d);
    const std::string prov = stamp(a.seed, "phantom");
    save_volume(p.clean, d / "clean.vol", prov);
    save_volume(p.observed, d / "observed.vol", prov);
    save_mask(p.brain, d / "brain.vol", {}, prov);
    save_mask(p.truth, d / "truth.vol", {}, prov);
  });
}

struct RefineArgs {
  std::string input, brain, truth, guidance = "auto", reconstructor = "harmonic";
  std::string tau_stop = "auto", trace, out, curve, prediction;
  std::optional<double> gamma;
  double radius = kDefaultHighPassRadius;
  int max_iters = kDefaultMaxIters;
  int timeout_ms = 300000;
  bool segmentation = false;
  std::uint64_t seed = 0;
};

struct Loaded {
  Volume x;
  Mask brain;
  std::optional<Mask> truth;
  ReconstructorKind kind;
  Volume guidance;
};

Loaded load_for_refine(const RefineArgs &a) {
  Loaded l = stage(Stage::Load, [&] {
    Volume x = load_volume(a.input);
    Mask brain = brain_or_derived(a.brain, x);
    std::optional<Mask> truth;
    if (!a.truth.empty())
      truth = load_mask(a.truth);
    return Loaded{std::move(x), std::move(brain), std::move(truth),
                  load_reconstructor(a.reconstructor, a.timeout_ms), Volume()};
  });
  l.guidance = stage(Stage::Guidance, [&] {
    if (a.guidance == "auto")
      return high_frequency_image(l.x, {a.radius});
    Volume g = load_volume(a.guidance);
    if (!(g.dims() == l.x.dims()))
      throw Error("guidance dims differ from input");
    return g;
  });
  return l;
}

ThresholdCurve scan_and_select(const RefineArgs &a, const Loaded &l) {
  return stage(Stage::Threshold, [&] {
    ThresholdCurve c;
    c.gamma = a.gamma.value_or(a.segmentation ? kGammaSegmentation : kGammaDetection);
    if (!(c.gamma > 0.0))
      throw Error("gamma must be > 0");
    ScanOptions so;
    so.seed = a.seed;
    if (l.truth) {
      so.truth = &*l.truth;
      so.dice_out = &c.dice_trace;
    }
    c.samples = scan_thresholds(l.x, l.brain, l.kind, l.guidance, so);
    c.selection = select_tau_stop(c.samples, c.gamma);
    return c;
  });
}

void cmd_threshold_scan(const RefineArgs &a) {
  const Loaded l = load_for_refine(a);
  const ThresholdCurve c = scan_and_select(a, l);
  stage(Stage::Output, [&] {
    json j = curve_to_json(c);
    j["seed"] = a.seed;
    write_json(a.out, j);
  });
}

void cmd_refine(const RefineArgs &a) {
  const Loaded l = load_for_refine(a);
  double tau = 0.0;
  std::optional<ThresholdCurve> curve;
  if (a.tau_stop == "auto") {
    curve = scan_and_select(a, l);
    tau = usable_tau_stop(curve->selection.tau_stop);
  } else {
    tau = stage(Stage::Config, [&] {
      std::size_t used = 0;
      const double t = std::stod(a.tau_stop, &used);
      if (used != a.tau_stop.size() || !(t > 0.0))
        throw Error("--tau-stop must be 'auto' or a positive number");
      return t;
    });
  }
  const RefinementResult r = stage(Stage::Refine, [&] {
    return refine(l.x, l.brain, l.kind, l.guidance, {tau, a.seed, a.max_iters});
  });
  stage(Stage::Output, [&] {
    const json prov{{"seed", a.seed}, {"tau_stop", tau}};
    save_mask(r.mask, a.out, l.x.spacing(), prov.dump());
    if (!a.trace.empty()) {
      json t = trace_to_json(r.trace);
      t["seed"] = a.seed;
      t["tau_stop"] = tau;
      write_json(a.trace, t);
    }
    if (!a.curve.empty() && curve)
      write_json(a.curve, curve_to_json(*curve));
    if (!a.prediction.empty())
      save_volume(r.final_prediction, a.prediction, prov.dump());
  });
  std::printf("%zu\n", r.mask.count());
}

struct EvalDetArgs {
  std::string manifest, out;
};

void cmd_eval_det(const EvalDetArgs &a) {
  const auto samples = stage(Stage::Load, [&] {
    const json m = read_json(a.manifest);
    const json &items = m.is_object() && m.contains("subjects") ? m["subjects"] : m;
    if (!items.is_array())
      throw Error("detection manifest must be an array of {label, score|mask}");
    std::vector<DetectionSample> s;
    const fs::path base = fs::path(a.manifest).parent_path();
    for (const auto &it : items) {
      DetectionSample d;
      d.label = it.at("label").get<int>();
      if (it.contains("score"))
        d.score = it["score"].get<double>();
      else if (it.contains("mask"))
        d.score = anomaly_score_mask(load_mask(base / it["mask"].get<std::string>()));
      else
        throw Error("manifest entry needs 'score' or 'mask'");
      s.push_back(d);
    }
    return s;
  });
  const json rep = stage(Stage::Evaluate, [&] { return detection_to_json(roc_pr(samples)); });
  stage(Stage::Output, [&] { write_json(a.out, rep); });
}

struct EvalSegArgs {
  std::string pred, truth, img, recon, brain, out;
};

void cmd_eval_seg(const EvalSegArgs &a) {
  struct In {
    Mask pred, truth, brain;
    Volume img, recon;
  };
  const In in = stage(Stage::Load, [&] {
    Volume img = load_volume(a.img);
    Mask brain = brain_or_derived(a.brain, img);
    return In{load_mask(a.pred), load_mask(a.truth), std::move(brain), std::move(img),
              load_volume(a.recon)};
  });
  const json rep = stage(Stage::Evaluate, [&] {
    const Mask healthy = mask_minus(in.brain, in.truth);
    return segmentation_to_json(evaluate_segmentation(in.pred, in.truth, in.img, in.recon, healthy));
  });
  stage(Stage::Output, [&] { write_json(a.out, rep); });
}

struct RunArgs {
  std::vector<std::string> configs;
  int jobs = 1;
  std::optional<std::string> input, brain, truth, output, reconstructor, mode;
  std::optional<double> radius, gamma, tau_stop;
  std::optional<int> max_iters;
  std::optional<std::uint64_t> seed;
  bool scale_radius = false, allow_anisotropic = false, no_normalize = false;
};

PipelineConfig build_config(const RunArgs &a, const std::string &file, std::uint64_t env_seed) {
  return stage(Stage::Config, [&] {
    PipelineConfig c;
    c.seed = env_seed;
    if (!file.empty())
      c = config_from_json(read_json(file), c);
    json over = json::object();
    if (a.input) over["input"] = *a.input;
    if (a.brain) over["brain"] = *a.brain;
    if (a.truth) over["truth"] = *a.truth;
    if (a.output) over["output"] = *a.output;
    if (a.reconstructor) over["reconstructor"] = *a.reconstructor;
    if (a.mode) over["mode"] = *a.mode;
    if (a.radius) over["radius"] = *a.radius;
    if (a.gamma) over["gamma"] = *a.gamma;
    if (a.tau_stop) over["tau_stop"] = *a.tau_stop;
    if (a.max_iters) over["max_iters"] = *a.max_iters;
    if (a.seed) over["seed"] = *a.seed;
    if (a.scale_radius) over["scale_radius"] = true;
    if (a.allow_anisotropic) over["allow_anisotropic"] = true;
    if (a.no_normalize) over["normalize"] = false;
    c = config_from_json(over, c);
    validate(c);
    if (c.output.empty())
      throw Error("no output directory given");
    return c;
  });
}

int cmd_run(const RunArgs &a, std::uint64_t env_seed) {
  std::vector<PipelineConfig> configs;
  if (a.configs.empty())
    configs.push_back(build_config(a, "", env_seed));
  for (const auto &f : a.configs)
    configs.push_back(build_config(a, f, env_seed));
  if (configs.size() > 1 && a.output)
    throw PipelineError(Stage::Config, "--output cannot be shared by several configs");
  const auto codes = run_batch(configs, a.jobs);
  for (int c : codes)
    if (c != 0)
      return c;
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Volumetric anomaly detection and segmentation by iterative mask refinement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "itermask 1.0.0");

  std::uint64_t env_seed = 0;
  try {
    env_seed = default_seed(0);
  } catch (const std::exception &e) {
    std::cerr << "itermask: [config] " << e.what() << "\n";
    return exit_code(Stage::Config);
  }

  NormalizeArgs na;
  auto *norm = app.add_subcommand("normalize", "Iterative brain z-score normalization");
  norm->add_option("input", na.in, "Input volume")->required();
  norm->add_option("output", na.out, "Output volume")->required();
  norm->add_option("--brain", na.brain, "Brain mask (default: nonzero voxels)");
  norm->add_option("--report", na.report, "Write normalization statistics as JSON");
  norm->add_flag("--allow-anisotropic", na.allow_anisotropic);

  HpArgs ha;
  auto *hp = app.add_subcommand("hp-filter", "High-frequency structural image");
  hp->add_option("input", ha.in)->required();
  hp->add_option("output", ha.out)->required();
  hp->add_option("--radius", ha.radius, "Low-frequency radius")->check(CLI::NonNegativeNumber);
  hp->add_flag("--scale-radius", ha.scale_radius, "Scale radius by grid size relative to 192");

  GenmaskArgs ga{"", "", env_seed};
  auto *gen = app.add_subcommand("genmask", "Random Gaussian training mask");
  gen->add_option("--brain", ga.brain)->required();
  gen->add_option("--out", ga.out)->required();
  gen->add_option("--seed", ga.seed);

  CorruptArgs ca;
  ca.seed = env_seed;
  auto *cor = app.add_subcommand("corrupt", "Synthesize an artifact");
  cor->add_option("--artifact", ca.artifact)
      ->required()
      ->check(CLI::IsMember({"chunk", "gaussian", "spike", "bias", "ghosting", "zipper",
                             "sequence-swap"}));
  cor->add_option("input", ca.in)->required();
  cor->add_option("output", ca.out)->required();
  cor->add_option("--gt", ca.gt, "Write the artifact truth mask");
  cor->add_option("--seed", ca.seed);
  cor->add_option("--sigma", ca.sigma, "gaussian/spike severity");
  cor->add_option("--alpha", ca.alpha, "ghosting attenuation");
  cor->add_option("--width", ca.width, "chunk width in planes");
  cor->add_option("--position", ca.position, "chunk position (top|middle)");
  cor->add_option("--strips", ca.strips, "zipper strip count");
  cor->add_option("--height", ca.height, "zipper strip height");
  cor->add_option("--period", ca.period, "ghosting period");
  cor->add_option("--axis", ca.axis, "artifact axis (0, 1, 2)");
  cor->add_option("--coef", ca.coef, "bias coefficients (one value or 20)")->delimiter(',');
  cor->add_option("--location", ca.location, "spike locations x,y,z[,x,y,z...]")->delimiter(',');
  cor->add_option("--spikes", ca.spikes, "number of random spike locations");
  cor->add_option("--sweep", ca.sweep, "severity grid; writes one output per value")->delimiter(',');
  cor->add_option("--manifest", ca.manifest, "sweep manifest path");

  PhantomArgs pa;
  pa.seed = env_seed;
  auto *ph = app.add_subcommand("phantom", "Synthetic brain phantom");
  ph->add_option("--out-dir", pa.out_dir)->required();
  ph->add_option("--dims", pa.dims)->delimiter(',');
  ph->add_option("--noise", pa.noise);
  ph->add_option("--lesion-radius", pa.lesion_radius);
  ph->add_option("--lesion-center", pa.lesion_center)->delimiter(',');
  ph->add_option("--offset", pa.offset);
  ph->add_option("--seed", pa.seed);

  RefineArgs ra;
  ra.seed = env_seed;
  auto add_common = [&ra](CLI::App *c) {
    c->add_option("--input", ra.input)->required();
    c->add_option("--brain", ra.brain, "Brain mask (default: nonzero voxels)");
    c->add_option("--truth", ra.truth, "Lesion mask for the Dice trace");
    c->add_option("--guidance", ra.guidance, "auto or a guidance volume");
    c->add_option("--radius", ra.radius, "Radius for --guidance auto");
    c->add_option("--reconstructor", ra.reconstructor,
                  "identity|mean-fill|harmonic|oracle:<vol>|external:<cmd>");
    c->add_option("--timeout-ms", ra.timeout_ms, "External reconstructor timeout");
    c->add_option("--gamma", ra.gamma);
    c->add_flag("--segmentation", ra.segmentation, "Use the segmentation default gamma");
    c->add_option("--seed", ra.seed);
  };
  auto *scan = app.add_subcommand("threshold-scan", "Scan thresholds and select tau_stop");
  add_common(scan);
  scan->add_option("--out", ra.out)->required();

  auto *ref = app.add_subcommand("refine", "Iterative mask refinement");
  add_common(ref);
  ref->add_option("--tau-stop", ra.tau_stop, "auto or a positive threshold");
  ref->add_option("--max-iters", ra.max_iters)->check(CLI::NonNegativeNumber);
  ref->add_option("--trace", ra.trace);
  ref->add_option("--curve", ra.curve, "Write the scan curve when --tau-stop auto");
  ref->add_option("--prediction", ra.prediction, "Write the final reconstruction");
  ref->add_option("--out", ra.out)->required();

  EvalDetArgs da;
  auto *det = app.add_subcommand("eval-det", "Detection metrics from a manifest");
  det->add_option("--manifest", da.manifest)->required();
  det->add_option("--out", da.out)->required();

  EvalSegArgs sa;
  auto *seg = app.add_subcommand("eval-seg", "Segmentation metrics");
  seg->add_option("--pred", sa.pred)->required();
  seg->add_option("--truth", sa.truth)->required();
  seg->add_option("--img", sa.img)->required();
  seg->add_option("--recon", sa.recon)->required();
  seg->add_option("--brain", sa.brain, "Brain mask (default: nonzero image voxels)");
  seg->add_option("--out", sa.out)->required();

  RunArgs rn;
  auto *run = app.add_subcommand("run", "Full pipeline; flags override the config files");
  run->add_option("config", rn.configs, "JSON config files (one per subject)");
  run->add_option("--jobs", rn.jobs)->check(CLI::PositiveNumber);
  run->add_option("--input", rn.input);
  run->add_option("--brain", rn.brain);
  run->add_option("--truth", rn.truth);
  run->add_option("--output", rn.output);
  run->add_option("--reconstructor", rn.reconstructor);
  run->add_option("--mode", rn.mode)->check(CLI::IsMember({"detection", "segmentation"}));
  run->add_option("--radius", rn.radius);
  run->add_option("--gamma", rn.gamma);
  run->add_option("--tau-stop", rn.tau_stop);
  run->add_option("--max-iters", rn.max_iters);
  run->add_option("--seed", rn.seed);
  run->add_flag("--scale-radius", rn.scale_radius);
  run->add_flag("--allow-anisotropic", rn.allow_anisotropic);
  run->add_flag("--no-normalize", rn.no_normalize);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(Stage::Config);
  }

  try {
    if (*norm)
      cmd_normalize(na);
    else if (*hp)
      cmd_hp_filter(ha);
    else if (*gen)
      cmd_genmask(ga);
    else if (*cor)
      cmd_corrupt(ca);
    else if (*ph)
      cmd_phantom(pa);
    else if (*scan)
      cmd_threshold_scan(ra);
    else if (*ref)
      cmd_refine(ra);
    else if (*det)
      cmd_eval_det(da);
    else if (*seg)
      cmd_eval_seg(sa);
    else if (*run)
      return cmd_run(rn, env_seed);
  } catch (const PipelineError &e) {
    std::cerr << "itermask: " << e.what() << "\n";
    return exit_code(e.stage());
  } catch (const std::exception &e) {
    std::cerr << "itermask: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
