#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <variant>

#include "itermask/volume.hpp"

namespace itermask {

/// Inputs handed to a reconstructor for one refinement iteration.
struct ReconstructionRequest {
  Volume corrupted; ///< noise inside the mask, original image outside
  Volume guidance;  ///< high-frequency structural image
  RefinementMask mask;
  BrainMask brain;
  int iteration = 0;
};

/// Throws unless every field shares dims and mask is a subset of brain.
void validate(const ReconstructionRequest &req);

class ReconstructionError : public Error {
public:
  using Error::Error;
};

namespace recon {

/// Returns the corrupted input unchanged.
struct Identity {};

/// Masked voxels take the mean of the unmasked brain voxels.
struct MeanFill {};

/// Masked voxels solve the discrete Laplace equation with unmasked voxels as
/// Dirichlet data (Gauss-Seidel), then the guidance image is added inside the
/// mask.
struct HarmonicInpaint {
  double tolerance = 1e-4;
  int max_sweeps = 10000;
};

/// Masked voxels are copied from a known clean volume.
struct PhantomOracle {
  std::shared_ptr<const Volume> clean;
};

/// Child-process reconstructor speaking the request-directory protocol.
struct External {
  std::string command;
  std::filesystem::path workdir;
  std::chrono::milliseconds timeout{300000};
  bool keep_requests = false;
};

/// In-process model. Output outside the mask is overwritten with the
/// corrupted input afterwards.
struct Callback {
  std::function<Volume(const ReconstructionRequest &)> fn;
};

} // namespace recon

using ReconstructorKind = std::variant<recon::Identity, recon::MeanFill, recon::HarmonicInpaint,
                                       recon::PhantomOracle, recon::External, recon::Callback>;

/// Parses a command-line reconstructor description:
///   identity | mean-fill | harmonic | oracle:<clean.vol> | external:<command>
ReconstructorKind parse_reconstructor(const std::string &text);

std::string describe(const ReconstructorKind &kind);

/// Predicts the masked voxels. Voxels outside the mask always equal the
/// corrupted input bit-for-bit.
Volume reconstruct(const ReconstructorKind &kind, const ReconstructionRequest &req);

/// Laplace solve used by HarmonicInpaint, exposed for testing. Returns the
/// number of sweeps performed.
int solve_harmonic(Volume &field, const RefinementMask &unknowns, double tolerance, int max_sweeps);

struct TrainingPair {
  ReconstructionRequest input;
  Volume target;
};

/// Builds one training example: corrupted = eps * m + clean * (1 - m) with
/// eps ~ N(0, 1); target = clean. The brain is taken as the whole grid.
TrainingPair training_pair(const Volume &clean, const Volume &guidance, const RefinementMask &mask,
                           std::uint64_t seed);

/// Runs the external protocol once. Exposed for protocol tests.
Volume run_external(const recon::External &ext, const ReconstructionRequest &req);

} // namespace itermask
