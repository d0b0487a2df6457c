#include "itermask/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

namespace itermask {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(const Dims &d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

namespace {

void check_dims(const Dims &d) {
  if (d.nx < 1 || d.ny < 1 || d.nz < 1)
    throw Error("volume dims must be >= 1, got " + to_string(d));
}

} // namespace

Volume::Volume(Dims dims, Spacing spacing, float fill) : dims_(dims), spacing_(spacing) {
  check_dims(dims_);
  data_.assign(dims_.count(), fill);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims_);
  if (data_.size() != dims_.count())
    throw Error("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                to_string(dims_));
}

bool Volume::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Mask::Mask(Dims dims, bool fill) : dims_(dims) {
  check_dims(dims_);
  bits_.assign(dims_.count(), fill ? 1 : 0);
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool Mask::subset_of(const Mask &other) const {
  if (!(dims_ == other.dims_))
    return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !other.bits_[i])
      return false;
  return true;
}

std::vector<std::size_t> Mask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i])
      out.push_back(i);
  return out;
}

namespace {

template <typename Op> Mask combine(const Mask &a, const Mask &b, Op op) {
  if (!(a.dims() == b.dims()))
    throw Error("mask dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  Mask out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.set(i, op(a[i], b[i]));
  return out;
}

} // namespace

Mask mask_and(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}
Mask mask_or(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}
Mask mask_minus(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x && !y; });
}

std::array<double, 3> centroid(const Mask &m) {
  std::array<double, 3> sum{0, 0, 0};
  std::size_t n = 0;
  const Dims &d = m.dims();
  for (std::size_t z = 0, i = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x, ++i)
        if (m[i]) {
          sum[0] += static_cast<double>(x);
          sum[1] += static_cast<double>(y);
          sum[2] += static_cast<double>(z);
          ++n;
        }
  if (n == 0)
    throw Error("centroid of empty mask");
  for (auto &s : sum)
    s /= static_cast<double>(n);
  return sum;
}

// ---- I/O ---------------------------------------------------------------------

fs::path sidecar_path(const fs::path &payload) {
  fs::path p = payload;
  p.replace_extension(".json");
  return p;
}

VolumeFormat format_from_path(const fs::path &path) {
  return path.extension() == ".nii" ? VolumeFormat::Nifti1 : VolumeFormat::Raw;
}

namespace {

std::vector<char> read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path &path, const void *data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out.write(static_cast<const char *>(data), static_cast<std::streamsize>(n));
  if (!out)
    throw IoError("write failed for " + path.string());
}

template <typename T> T read_le(const char *p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (sizeof(T) > 1) {
    bool need = swap != (std::endian::native == std::endian::big);
    if (need) {
      auto *b = reinterpret_cast<unsigned char *>(&v);
      std::reverse(b, b + sizeof(T));
    }
  }
  return v;
}

enum class DType { F32, I16, U8 };

std::size_t item_size(DType t) {
  switch (t) {
  case DType::F32:
    return 4;
  case DType::I16:
    return 2;
  case DType::U8:
    return 1;
  }
  return 0;
}

DType parse_dtype(const std::string &s) {
  if (s == "f32")
    return DType::F32;
  if (s == "i16")
    return DType::I16;
  if (s == "u8")
    return DType::U8;
  throw IoError("unsupported dtype '" + s + "'");
}

struct RawHeader {
  Dims dims;
  Spacing spacing;
  DType dtype;
};

RawHeader read_sidecar(const fs::path &payload) {
  const fs::path side = sidecar_path(payload);
  std::ifstream in(side);
  if (!in)
    throw IoError("missing sidecar " + side.string());
  json j;
  try {
    in >> j;
    RawHeader h;
    auto dims = j.at("dims").get<std::vector<long long>>();
    auto spacing = j.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3)
      throw IoError("sidecar dims/spacing must have 3 entries");
    for (auto d : dims)
      if (d < 1)
        throw IoError("sidecar dims must be >= 1");
    h.dims = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
              static_cast<std::size_t>(dims[2])};
    h.spacing = {spacing[0], spacing[1], spacing[2]};
    h.dtype = parse_dtype(j.at("dtype").get<std::string>());
    return h;
  } catch (const json::exception &e) {
    throw IoError("malformed sidecar " + side.string() + ": " + e.what());
  }
}

void write_sidecar(const fs::path &payload, const Dims &d, const Spacing &s, const char *dtype,
                   const std::string &extra) {
  json j;
  j["dims"] = {d.nx, d.ny, d.nz};
  j["spacing"] = {s.sx, s.sy, s.sz};
  j["dtype"] = dtype;
  if (!extra.empty())
    j["provenance"] = json::parse(extra);
  const std::string text = j.dump() + "\n";
  write_file(sidecar_path(payload), text.data(), text.size());
}

std::vector<float> decode(const char *p, std::size_t n, DType t, bool swap) {
  std::vector<float> out(n);
  switch (t) {
  case DType::F32:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = read_le<float>(p + 4 * i, swap);
    break;
  case DType::I16:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = static_cast<float>(read_le<std::int16_t>(p + 2 * i, swap));
    break;
  case DType::U8:
    throw IoError("u8 payloads are masks; use load_mask");
  }
  return out;
}

Volume load_raw(const fs::path &path) {
  RawHeader h = read_sidecar(path);
  auto bytes = read_file(path);
  const std::size_t expected = h.dims.count() * item_size(h.dtype);
  if (bytes.size() != expected)
    throw IoError("payload size " + std::to_string(bytes.size()) + " != expected " +
                  std::to_string(expected) + " for " + path.string());
  return Volume(h.dims, h.spacing, decode(bytes.data(), h.dims.count(), h.dtype, false));
}

constexpr std::size_t kNiftiHeaderSize = 348;

Volume load_nifti(const fs::path &path) {
  auto bytes = read_file(path);
  if (bytes.size() < kNiftiHeaderSize)
    throw IoError("NIfTI file shorter than header: " + path.string());
  const char *h = bytes.data();
  if (std::memcmp(h + 344, "n+1\0", 4) != 0)
    throw IoError("bad NIfTI-1 magic in " + path.string());
  bool swap = false;
  if (read_le<std::int32_t>(h, false) != 348) {
    if (read_le<std::int32_t>(h, true) != 348)
      throw IoError("bad NIfTI sizeof_hdr in " + path.string());
    swap = true;
  }
  const auto ndim = read_le<std::int16_t>(h + 40, swap);
  if (ndim < 1 || ndim > 7)
    throw IoError("bad NIfTI dim[0]=" + std::to_string(ndim));
  std::array<std::size_t, 3> n{1, 1, 1};
  for (int k = 0; k < ndim; ++k) {
    auto dk = read_le<std::int16_t>(h + 42 + 2 * k, swap);
    if (dk < 1)
      throw IoError("bad NIfTI dim[" + std::to_string(k + 1) + "]");
    if (k < 3)
      n[k] = static_cast<std::size_t>(dk);
    else if (dk != 1)
      throw IoError("NIfTI volumes with more than 3 non-singleton dims are unsupported");
  }
  const auto datatype = read_le<std::int16_t>(h + 70, swap);
  DType t;
  if (datatype == 16)
    t = DType::F32;
  else if (datatype == 4)
    t = DType::I16;
  else
    throw IoError("unsupported NIfTI datatype " + std::to_string(datatype));
  Spacing sp{read_le<float>(h + 80, swap), read_le<float>(h + 84, swap),
             read_le<float>(h + 88, swap)};
  for (int k = ndim; k < 3; ++k)
    (k == 0 ? sp.sx : k == 1 ? sp.sy : sp.sz) = 1.0;
  const float vox_offset = read_le<float>(h + 108, swap);
  if (!(vox_offset >= 0.0f))
    throw IoError("bad NIfTI vox_offset");
  const auto offset = static_cast<std::size_t>(vox_offset);
  Dims dims{n[0], n[1], n[2]};
  const std::size_t need = dims.count() * item_size(t);
  if (offset < kNiftiHeaderSize || bytes.size() - std::min(bytes.size(), offset) < need)
    throw IoError("NIfTI payload size mismatch in " + path.string());
  return Volume(dims, sp, decode(h + offset, dims.count(), t, swap));
}

} // namespace

Volume load_volume(const fs::path &path, VolumeFormat format) {
  Volume v = format == VolumeFormat::Nifti1 ? load_nifti(path) : load_raw(path);
  if (!v.all_finite())
    throw IoError("non-finite voxel values in " + path.string());
  return v;
}

void save_volume(const Volume &v, const fs::path &path, const std::string &extra) {
  std::vector<char> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    float f = v[i];
    if constexpr (std::endian::native == std::endian::big) {
      auto *b = reinterpret_cast<unsigned char *>(&f);
      std::reverse(b, b + 4);
    }
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  write_file(path, bytes.data(), bytes.size());
  write_sidecar(path, v.dims(), v.spacing(), "f32", extra);
}

Mask load_mask(const fs::path &path) {
  RawHeader h = read_sidecar(path);
  if (h.dtype != DType::U8)
    throw IoError("mask file must have dtype u8: " + path.string());
  auto bytes = read_file(path);
  if (bytes.size() != h.dims.count())
    throw IoError("mask payload size mismatch for " + path.string());
  Mask m(h.dims);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const auto b = static_cast<unsigned char>(bytes[i]);
    if (b > 1)
      throw IoError("mask values must be 0 or 1 in " + path.string());
    m.set(i, b == 1);
  }
  return m;
}

void save_mask(const Mask &m, const fs::path &path, Spacing spacing, const std::string &extra) {
  auto bits = m.bits();
  write_file(path, bits.data(), bits.size());
  write_sidecar(path, m.dims(), spacing, "u8", extra);
}

// ---- preprocessing -------------------------------------------------------------

BrainMask derive_brain_mask(const Volume &v, float threshold) {
  Mask m(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::fabs(v[i]) > threshold)
      m.set(i);
  return m;
}

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

template <typename Pred>
Moments brain_moments(const Volume &v, const std::vector<std::size_t> &idx, Pred keep) {
  Moments m;
  double sum = 0.0;
  for (auto i : idx)
    if (keep(v[i])) {
      sum += v[i];
      ++m.n;
    }
  if (m.n == 0)
    return m;
  m.mean = sum / static_cast<double>(m.n);
  double ss = 0.0;
  for (auto i : idx)
    if (keep(v[i])) {
      const double d = v[i] - m.mean;
      ss += d * d;
    }
  m.std = std::sqrt(ss / static_cast<double>(m.n));
  return m;
}

} // namespace

NormalizationResult normalize_iterative_zscore(const Volume &v, const BrainMask &brain) {
  if (!(v.dims() == brain.dims()))
    throw Error("normalize: brain mask dims mismatch");
  const auto idx = brain.indices();
  if (idx.empty())
    throw Error("normalize: empty brain mask");

  NormalizationResult res{v, {}};
  Volume &cur = res.volume;
  NormalizationReport &rep = res.report;

  auto renormalize = [&](const Moments &m, int pass) {
    if (!(m.std > 0.0))
      throw Error("normalize: degenerate brain intensities at pass " + std::to_string(pass));
    for (auto i : idx)
      cur[i] = static_cast<float>((cur[i] - m.mean) / m.std);
    rep.mean_history.push_back(m.mean);
    rep.std_history.push_back(m.std);
    rep.offset += m.mean * rep.scale;
    rep.scale *= m.std;
    ++rep.passes;
  };

  renormalize(brain_moments(cur, idx, [](float) { return true; }), 0);
  for (int pass = 1; pass <= kNormalizationRepeats; ++pass) {
    // Current values are already standardized by the latest statistics, so the
    // band of the current distribution is |value| <= 3.
    auto within = [](float x) { return std::fabs(x) <= kNormalizationBand; };
    renormalize(brain_moments(cur, idx, within), pass);
  }
  // Emit the composed map so any volume passed through apply_normalization
  // with this report lands on bit-identical values.
  res.volume = apply_normalization(v, brain, rep);
  return res;
}

Volume apply_normalization(const Volume &v, const BrainMask &brain, const NormalizationReport &r) {
  if (!(v.dims() == brain.dims()))
    throw Error("apply_normalization: dims mismatch");
  Volume out = v;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (brain[i])
      out[i] = static_cast<float>((static_cast<double>(v[i]) - r.offset) / r.scale);
  return out;
}

void check_isotropic(const Volume &v) {
  const Spacing &s = v.spacing();
  if (std::fabs(s.sx - s.sy) > 1e-6 || std::fabs(s.sx - s.sz) > 1e-6)
    throw Error("anisotropic spacing (" + std::to_string(s.sx) + ", " + std::to_string(s.sy) +
                ", " + std::to_string(s.sz) + "); resample to isotropic first");
}

Volume crop_or_pad(const Volume &v, Dims target) {
  Volume out(target, v.spacing());
  const Mask brain = derive_brain_mask(v);
  if (brain.empty())
    return out;
  const auto c = centroid(brain);
  std::array<long long, 3> shift{};
  for (int a = 0; a < 3; ++a)
    shift[a] = std::llround(c[a]) - static_cast<long long>(target[a] / 2);
  for (std::size_t z = 0; z < target.nz; ++z) {
    const long long sz = static_cast<long long>(z) + shift[2];
    if (sz < 0 || sz >= static_cast<long long>(v.dims().nz))
      continue;
    for (std::size_t y = 0; y < target.ny; ++y) {
      const long long sy = static_cast<long long>(y) + shift[1];
      if (sy < 0 || sy >= static_cast<long long>(v.dims().ny))
        continue;
      for (std::size_t x = 0; x < target.nx; ++x) {
        const long long sx = static_cast<long long>(x) + shift[0];
        if (sx < 0 || sx >= static_cast<long long>(v.dims().nx))
          continue;
        out.at(x, y, z) = v.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy),
                               static_cast<std::size_t>(sz));
      }
    }
  }
  return out;
}

} // namespace itermask
