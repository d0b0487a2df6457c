#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itermask/metrics.hpp"
#include "itermask/refine.hpp"
#include "itermask/threshold.hpp"
#include "itermask/volume.hpp"

namespace itermask {

enum class Stage { Config, Load, Preprocess, Guidance, Threshold, Refine, Evaluate, Output };
std::string to_string(Stage s);
/// Process exit status for a failure in `s` (2..9).
int exit_code(Stage s);

class PipelineError : public Error {
public:
  PipelineError(Stage stage, const std::string &what)
      : Error("[" + to_string(stage) + "] " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

private:
  Stage stage_;
};

enum class Mode { Detection, Segmentation };

struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path brain;  ///< empty: nonzero voxels of the input
  std::filesystem::path truth;  ///< optional lesion mask for evaluation
  std::filesystem::path output; ///< directory receiving the artifacts

  std::string reconstructor = "harmonic"; ///< see parse_reconstructor
  int external_timeout_ms = 300000;

  double radius = 15.0;
  bool scale_radius = false; ///< scale radius by grid size relative to 192
  Mode mode = Mode::Detection;
  std::optional<double> gamma; ///< default depends on mode
  std::optional<double> tau_stop; ///< fixed threshold; skips the scan
  int max_iters = kDefaultMaxIters;
  std::uint64_t seed = 0;
  bool normalize = true;
  bool allow_anisotropic = false;
};

double effective_gamma(const PipelineConfig &c);
void validate(const PipelineConfig &c);

/// Semantic fields only (the output directory is excluded).
nlohmann::json semantic_json(const PipelineConfig &c);
nlohmann::json to_json(const PipelineConfig &c);
/// Overlays the keys present in `j` onto `base`. Unknown keys are an error.
PipelineConfig config_from_json(const nlohmann::json &j, PipelineConfig base = {});

/// 64-bit FNV-1a over the canonical semantic JSON, as 16 hex digits.
std::string config_hash(const PipelineConfig &c);

/// Seed from ITERMASK_SEED when set, else `fallback`.
std::uint64_t default_seed(std::uint64_t fallback = 0);

/// Sidecar provenance object {"config_hash","seed"}.
std::string provenance(const std::string &hash, std::uint64_t seed);

nlohmann::json curve_to_json(const ThresholdCurve &c);
nlohmann::json trace_to_json(const RefinementTrace &t);
nlohmann::json detection_to_json(const DetectionReport &r);

struct SegmentationEval {
  OverlapReport overlap;
  std::optional<double> assd_mm;
  std::optional<PsnrResult> psnr;
};
/// Overlap, ASSD (when both masks are nonempty) and PSNR over `healthy`.
SegmentationEval evaluate_segmentation(const Mask &pred, const Mask &truth, const Volume &x,
                                       const Volume &x_pred, const Mask &healthy);
nlohmann::json segmentation_to_json(const SegmentationEval &e);

/// Writes JSON with a trailing newline, 2-space indented.
void write_json(const std::filesystem::path &path, const nlohmann::json &j);
nlohmann::json read_json(const std::filesystem::path &path);

/// A selected threshold of exactly 0 (identically zero scan errors) is raised
/// to the smallest positive double so that zero-error voxels are unmasked.
double usable_tau_stop(double tau);

struct PipelineResult {
  std::string config_hash;
  NormalizationReport normalization;
  std::optional<ThresholdCurve> curve;
  double tau_stop = 0.0;
  RefinementResult refinement;
  nlohmann::json report;
};

/// normalize -> guidance -> (scan -> select) -> refine -> evaluate, writing
/// normalized.vol, guidance.vol, curve.json, mask.vol, trace.json and
/// report.json into config.output. Throws PipelineError.
PipelineResult run_pipeline(const PipelineConfig &config);

/// Runs independent subjects on up to `jobs` threads. Returns one exit
/// status per config (0 on success); failures are reported on stderr.
std::vector<int> run_batch(const std::vector<PipelineConfig> &configs, int jobs);

} // namespace itermask
