#include "itermask/reconstruct.hpp"

#include <array>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <random>
#include <thread>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "itermask/random.hpp"

extern char **environ;

namespace itermask {

namespace fs = std::filesystem;

void validate(const ReconstructionRequest &req) {
  const Dims &d = req.corrupted.dims();
  if (!(req.guidance.dims() == d) || !(req.mask.dims() == d) || !(req.brain.dims() == d))
    throw ReconstructionError("reconstruction request fields disagree on dims");
  if (!req.mask.subset_of(req.brain))
    throw ReconstructionError("refinement mask is not a subset of the brain mask");
}

ReconstructorKind parse_reconstructor(const std::string &text) {
  if (text == "identity")
    return recon::Identity{};
  if (text == "mean-fill")
    return recon::MeanFill{};
  if (text == "harmonic" || text == "harmonic-inpaint")
    return recon::HarmonicInpaint{};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon), rest = text.substr(colon + 1);
    if (rest.empty())
      throw Error("reconstructor '" + head + "' needs an argument");
    if (head == "oracle" || head == "phantom-oracle")
      return recon::PhantomOracle{std::make_shared<const Volume>(load_volume(rest))};
    if (head == "external") {
      recon::External ext;
      ext.command = rest;
      ext.workdir = fs::temp_directory_path();
      return ext;
    }
  }
  throw Error("unknown reconstructor '" + text + "'");
}

std::string describe(const ReconstructorKind &kind) {
  struct {
    std::string operator()(const recon::Identity &) const { return "identity"; }
    std::string operator()(const recon::MeanFill &) const { return "mean-fill"; }
    std::string operator()(const recon::HarmonicInpaint &) const { return "harmonic"; }
    std::string operator()(const recon::PhantomOracle &) const { return "phantom-oracle"; }
    std::string operator()(const recon::External &e) const { return "external:" + e.command; }
    std::string operator()(const recon::Callback &) const { return "callback"; }
  } visitor;
  return std::visit(visitor, kind);
}

// ---- harmonic inpainting --------------------------------------------------------

int solve_harmonic(Volume &field, const RefinementMask &unknowns, double tolerance,
                   int max_sweeps) {
  const Dims &d = field.dims();
  const auto idx = unknowns.indices();
  if (idx.empty())
    return 0;
  const std::size_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_update = 0.0;
    for (const std::size_t i : idx) {
      const std::size_t x = i % d.nx, y = (i / d.nx) % d.ny, z = i / sz;
      double sum = 0.0;
      int n = 0;
      // Grid faces act as zero-flux boundaries: only in-bounds neighbors count.
      if (x > 0) sum += field[i - sx], ++n;
      if (x + 1 < d.nx) sum += field[i + sx], ++n;
      if (y > 0) sum += field[i - sy], ++n;
      if (y + 1 < d.ny) sum += field[i + sy], ++n;
      if (z > 0) sum += field[i - sz], ++n;
      if (z + 1 < d.nz) sum += field[i + sz], ++n;
      if (n == 0)
        continue;
      const float next = static_cast<float>(sum / n);
      max_update = std::max(max_update, static_cast<double>(std::fabs(next - field[i])));
      field[i] = next;
    }
    if (max_update < tolerance)
      return sweep;
  }
  throw ReconstructionError("harmonic inpainting did not converge within " +
                            std::to_string(max_sweeps) + " sweeps");
}

namespace {

double unmasked_brain_mean(const ReconstructionRequest &req) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < req.corrupted.size(); ++i)
    if (req.brain[i] && !req.mask[i]) {
      sum += req.corrupted[i];
      ++n;
    }
  // With the whole brain masked there is no context; z-scored data has mean 0.
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Volume mean_fill(const ReconstructionRequest &req) {
  Volume out = req.corrupted;
  const auto mean = static_cast<float>(unmasked_brain_mean(req));
  for (std::size_t i = 0; i < out.size(); ++i)
    if (req.mask[i])
      out[i] = mean;
  return out;
}

Volume harmonic(const recon::HarmonicInpaint &h, const ReconstructionRequest &req) {
  Volume out = req.corrupted;
  const auto init = static_cast<float>(unmasked_brain_mean(req));
  for (std::size_t i = 0; i < out.size(); ++i)
    if (req.mask[i])
      out[i] = init;
  solve_harmonic(out, req.mask, h.tolerance, h.max_sweeps);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (req.mask[i])
      out[i] += req.guidance[i];
  return out;
}

Volume oracle(const recon::PhantomOracle &o, const ReconstructionRequest &req) {
  if (!o.clean)
    throw ReconstructionError("phantom oracle has no clean volume");
  if (!(o.clean->dims() == req.corrupted.dims()))
    throw ReconstructionError("phantom oracle clean volume dims mismatch");
  Volume out = req.corrupted;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (req.mask[i])
      out[i] = (*o.clean)[i];
  return out;
}

// ---- external protocol -------------------------------------------------------------

std::string make_uuid() {
  std::random_device rd;
  std::array<unsigned char, 16> b{};
  for (auto &c : b)
    c = static_cast<unsigned char>(rd() & 0xFF);
  b[6] = static_cast<unsigned char>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<unsigned char>((b[8] & 0x3F) | 0x80);
  char buf[37];
  std::snprintf(buf, sizeof buf,
                "%02x%02x%02x%02x-%02x%02x-%02x%02x-%02x%02x-%02x%02x%02x%02x%02x%02x", b[0], b[1],
                b[2], b[3], b[4], b[5], b[6], b[7], b[8], b[9], b[10], b[11], b[12], b[13], b[14],
                b[15]);
  return buf;
}

/// Runs `command "$dir"` through /bin/sh in its own process group. Returns the
/// exit status, or throws on timeout or spawn failure.
int run_child(const std::string &command, const fs::path &dir, std::chrono::milliseconds timeout) {
  const std::string script = command + " \"$1\"";
  const std::string dir_s = dir.string();
  std::array<const char *, 6> argv{"/bin/sh", "-c", script.c_str(), "itermask-recon",
                                   dir_s.c_str(), nullptr};
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", nullptr, &attr, const_cast<char **>(argv.data()),
                             environ);
  posix_spawnattr_destroy(&attr);
  if (rc != 0)
    throw ReconstructionError("failed to spawn external reconstructor: errno " +
                              std::to_string(rc));

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t w = waitpid(pid, &status, WNOHANG);
    if (w == pid)
      break;
    if (w < 0 && errno != EINTR)
      throw ReconstructionError("waitpid failed for external reconstructor");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw ReconstructionError("external reconstructor timed out after " +
                                std::to_string(timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (WIFEXITED(status))
    return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

} // namespace

Volume run_external(const recon::External &ext, const ReconstructionRequest &req) {
  if (ext.command.empty())
    throw ReconstructionError("external reconstructor command is empty");
  const std::string id = make_uuid();
  const fs::path dir = ext.workdir / ("req-" + id);
  fs::create_directories(dir);

  save_volume(req.corrupted, dir / "corrupted.vol");
  save_volume(req.guidance, dir / "guidance.vol");
  save_mask(req.mask, dir / "mask.vol", req.corrupted.spacing());
  {
    const Dims &d = req.corrupted.dims();
    nlohmann::json manifest{{"request_id", id},
                            {"dims", {d.nx, d.ny, d.nz}},
                            {"iteration", req.iteration}};
    std::ofstream(dir / "manifest.json") << manifest.dump() << "\n";
  }

  const int code = run_child(ext.command, dir, ext.timeout);
  if (code != 0)
    throw ReconstructionError("external reconstructor exited with code " + std::to_string(code) +
                              " (request " + dir.string() + ")");
  const fs::path pred_path = dir / "prediction.vol";
  if (!fs::exists(pred_path) || !fs::exists(sidecar_path(pred_path)))
    throw ReconstructionError("external reconstructor produced no prediction.vol in " +
                              dir.string());
  Volume pred;
  try {
    pred = load_volume(pred_path, VolumeFormat::Raw);
  } catch (const IoError &e) {
    throw ReconstructionError(std::string("malformed external prediction: ") + e.what());
  }
  if (!(pred.dims() == req.corrupted.dims()))
    throw ReconstructionError("external prediction dims " + to_string(pred.dims()) +
                              " != request dims " + to_string(req.corrupted.dims()));
  if (!ext.keep_requests) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  return pred;
}

Volume reconstruct(const ReconstructorKind &kind, const ReconstructionRequest &req) {
  validate(req);
  if (req.mask.empty())
    return req.corrupted;

  struct {
    const ReconstructionRequest &req;
    Volume operator()(const recon::Identity &) const { return req.corrupted; }
    Volume operator()(const recon::MeanFill &) const { return mean_fill(req); }
    Volume operator()(const recon::HarmonicInpaint &h) const { return harmonic(h, req); }
    Volume operator()(const recon::PhantomOracle &o) const { return oracle(o, req); }
    Volume operator()(const recon::External &e) const { return run_external(e, req); }
    Volume operator()(const recon::Callback &c) const {
      Volume v = c.fn(req);
      if (!(v.dims() == req.corrupted.dims()))
        throw ReconstructionError("callback reconstructor returned wrong dims");
      return v;
    }
  } visitor{req};

  Volume out = std::visit(visitor, kind);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!req.mask[i])
      out[i] = req.corrupted[i];
  if (!out.all_finite())
    throw ReconstructionError("reconstructor produced non-finite values");
  if (!(out.spacing() == req.corrupted.spacing()))
    return Volume(out.dims(), req.corrupted.spacing(), std::vector<float>(out.values()));
  return out;
}

TrainingPair training_pair(const Volume &clean, const Volume &guidance, const RefinementMask &mask,
                           std::uint64_t seed) {
  if (!(clean.dims() == guidance.dims()) || !(clean.dims() == mask.dims()))
    throw Error("training_pair: dims mismatch");
  Rng rng = make_rng(seed, 7);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Volume corrupted = clean;
  for (std::size_t i = 0; i < corrupted.size(); ++i) {
    const float eps = normal(rng);
    if (mask[i])
      corrupted[i] = eps;
  }
  return {{std::move(corrupted), guidance, mask, Mask(clean.dims(), true), 0}, clean};
}

} // namespace itermask
