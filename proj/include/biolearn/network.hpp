#pragma once

// MLP representation, forward/backward passes and the model file format.
//
// Hidden layer, nonnegative mode:
//   u = a_prev W
//   v = beta (|u| - mu) / sigma      mu, sigma: scalar stats of |u| over the batch
//   h = relu(v)
//   a = h / max(m, rescale_eps)      m: batch max of h
// Standard mode: a = relu(u). Hidden layers carry no bias.
//
// Output: z = a_last W_out + b, p = softmax(z).
//
// Train mode takes (mu, sigma, m) from the batch; eval mode uses the running
// averages kept in the model and clamps a at 1 (a running max can be smaller
// than an eval batch's max).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "biolearn/data.hpp"
#include "biolearn/error.hpp"
#include "biolearn/numerics.hpp"
#include "biolearn/sha256.hpp"

namespace biolearn {

struct Architecture {
  std::size_t input_dim = 784;
  std::vector<std::size_t> hidden_dims{2000};
  std::size_t output_dim = 10;
  bool nonneg = true;
  double beta_norm = 1.0;
  double rescale_eps = 1e-8;

  std::size_t layers() const { return hidden_dims.size() + 1; }
  std::size_t in_dim(std::size_t l) const { return l == 0 ? input_dim : hidden_dims[l - 1]; }
  std::size_t out_dim(std::size_t l) const {
    return l == hidden_dims.size() ? output_dim : hidden_dims[l];
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ParameterError("architecture: zero dimension");
    for (auto h : hidden_dims)
      if (h == 0) throw ParameterError("architecture: zero-width hidden layer");
    if (!(beta_norm > 0.0) || !std::isfinite(beta_norm))
      throw ParameterError("architecture: beta_norm must be positive");
    if (!(rescale_eps > 0.0)) throw ParameterError("architecture: rescale_eps must be positive");
  }

  bool operator==(const Architecture&) const = default;
};

/// Scalar statistics of one hidden layer: mean and std of |u|, max of relu(v).
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  double max = 1.0;
  bool operator==(const NormStats&) const = default;
};

inline constexpr double kNormStatsDecay = 0.99;
inline constexpr double kSigmaFloor = 1e-12;

struct MlpModel {
  Architecture arch;
  std::vector<Matrix> weights;  // layer l: in_dim(l) x out_dim(l)
  std::vector<double> bias;     // output layer only, length K
  std::vector<NormStats> norm_stats;  // one per hidden layer
  bool has_norm_stats = false;

  Matrix& output_weights() { return weights.back(); }
  const Matrix& output_weights() const { return weights.back(); }

  bool operator==(const MlpModel&) const = default;
};

/// Nonneg: W ~ U[0.01, 0.1). Standard: W ~ N(0, 0.01). Bias zero, stats unset.
inline MlpModel init_model(const Architecture& arch, Rng rng) {
  arch.validate();
  MlpModel m;
  m.arch = arch;
  for (std::size_t l = 0; l < arch.layers(); ++l) {
    const auto in = arch.in_dim(l);
    const auto out = arch.out_dim(l);
    auto values = arch.nonneg ? draw_uniform(rng, 0.01, 0.1, in * out)
                              : draw_normal(rng, 0.0, 0.01, in * out);
    m.weights.emplace_back(in, out, std::move(values));
  }
  m.bias.assign(arch.output_dim, 0.0);
  m.norm_stats.assign(arch.hidden_dims.size(), NormStats{});
  return m;
}

// ---------------------------------------------------------------------------
// Magnitude-preserving normalisation

/// Population mean / std of |y| over all entries; std floored at kSigmaFloor.
/// `guarded` reports whether the floor was hit.
inline NormStats magnitude_stats(const Matrix& y, bool* guarded = nullptr) {
  NormStats s;
  const auto v = y.values();
  if (v.empty()) {
    if (guarded) *guarded = true;
    s.std = kSigmaFloor;
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += std::abs(x);
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) {
    const double d = std::abs(x) - s.mean;
    ss += d * d;
  }
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  const bool hit = !(s.std >= kSigmaFloor);
  if (hit) s.std = kSigmaFloor;
  if (guarded) *guarded = hit;
  return s;
}

/// beta (|y| - mean) / std with the given statistics.
inline Matrix normalize_magnitude(const Matrix& y, double beta, const NormStats& s) {
  Matrix out(y.rows(), y.cols());
  auto src = y.values();
  auto dst = out.values();
  const double scale = beta / s.std;
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = scale * (std::abs(src[i]) - s.mean);
  return out;
}

/// Batch-statistics form: statistics are computed from y itself.
inline Matrix normalize_magnitude(const Matrix& y, double beta, bool* guarded = nullptr) {
  return normalize_magnitude(y, beta, magnitude_stats(y, guarded));
}

/// running <- decay * running + (1 - decay) * batch; the first batch initialises.
inline void update_running_stats(MlpModel& m, std::span<const NormStats> batch) {
  if (batch.size() != m.norm_stats.size()) throw ShapeError("norm stats: layer count mismatch");
  if (!m.has_norm_stats) {
    std::copy(batch.begin(), batch.end(), m.norm_stats.begin());
    m.has_norm_stats = true;
    return;
  }
  constexpr double d = kNormStatsDecay;
  for (std::size_t l = 0; l < batch.size(); ++l) {
    auto& r = m.norm_stats[l];
    r.mean = d * r.mean + (1.0 - d) * batch[l].mean;
    r.std = d * r.std + (1.0 - d) * batch[l].std;
    r.max = d * r.max + (1.0 - d) * batch[l].max;
  }
}

// ---------------------------------------------------------------------------
// Forward

enum class Mode { train, eval };

struct LayerTrace {
  Matrix u;  // pre-activation
  Matrix v;  // normalised (nonneg mode only)
  Matrix a;  // post-activation
  NormStats stats;  // statistics used (nonneg mode only)
  bool clamp = false;
  bool guarded = false;
};

struct ForwardTrace {
  std::vector<LayerTrace> hidden;
  Matrix z;
  Matrix p;

  std::vector<NormStats> stats() const {
    std::vector<NormStats> s;
    for (const auto& h : hidden) s.push_back(h.stats);
    return s;
  }
  bool any_guarded() const {
    return std::any_of(hidden.begin(), hidden.end(), [](const auto& h) { return h.guarded; });
  }
};

inline Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    auto pr = p.row(r);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < zr.size(); ++c) sum += (pr[c] = std::exp(zr[c] - mx));
    for (double& x : pr) x /= sum;
  }
  return p;
}

/// z = a W + b (bias broadcast over rows).
inline Matrix affine(const Matrix& a, const Matrix& w, std::span<const double> b) {
  Matrix z = matmul(a, w);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += b[c];
  }
  return z;
}

namespace detail {

inline void check_input(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.arch.input_dim)
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(m.arch.input_dim));
}

// One nonneg hidden layer. `fixed` supplies (mean, std, max); without it the
// batch's own statistics are used.
inline LayerTrace hidden_nonneg(const Matrix& in, const Matrix& w, double beta, double eps,
                                const NormStats* fixed, bool clamp) {
  LayerTrace t;
  t.u = matmul(in, w);
  if (fixed) {
    t.stats = *fixed;
  } else {
    t.stats = magnitude_stats(t.u, &t.guarded);
  }
  t.v = normalize_magnitude(t.u, beta, t.stats);
  t.a = Matrix(t.v.rows(), t.v.cols());
  auto vv = t.v.values();
  auto av = t.a.values();
  if (!fixed) {
    double mx = 0.0;
    for (double x : vv) mx = std::max(mx, x);
    t.stats.max = mx;
  }
  const double scale = 1.0 / std::max(t.stats.max, eps);
  for (std::size_t i = 0; i < vv.size(); ++i) {
    double a = std::max(vv[i], 0.0) * scale;
    if (clamp) a = std::min(a, 1.0);
    av[i] = a;
  }
  t.clamp = clamp;
  return t;
}

inline LayerTrace hidden_standard(const Matrix& in, const Matrix& w) {
  LayerTrace t;
  t.u = matmul(in, w);
  t.a = t.u;
  for (double& x : t.a.values()) x = std::max(x, 0.0);
  return t;
}

}  // namespace detail

/// Forward pass with explicitly supplied per-layer statistics. `stats` empty
/// means batch statistics. Statistics are ignored in standard mode.
inline ForwardTrace forward_with_stats(const MlpModel& m, const Matrix& x,
                                       std::span<const NormStats> stats, bool clamp) {
  detail::check_input(m, x);
  ForwardTrace tr;
  const Matrix* in = &x;
  const auto nh = m.arch.hidden_dims.size();
  for (std::size_t l = 0; l < nh; ++l) {
    if (m.arch.nonneg) {
      tr.hidden.push_back(detail::hidden_nonneg(*in, m.weights[l], m.arch.beta_norm,
                                                m.arch.rescale_eps,
                                                stats.empty() ? nullptr : &stats[l], clamp));
    } else {
      tr.hidden.push_back(detail::hidden_standard(*in, m.weights[l]));
    }
    in = &tr.hidden.back().a;
  }
  tr.z = affine(*in, m.weights.back(), m.bias);
  tr.p = softmax_rows(tr.z);
  return tr;
}

/// Train mode: batch statistics, model untouched (see forward_train).
/// Eval mode: running statistics and clamping; an untrained nonneg model
/// (no running statistics) falls back to batch statistics.
inline ForwardTrace forward(const MlpModel& m, const Matrix& x, Mode mode = Mode::eval) {
  if (mode == Mode::train || !m.arch.nonneg) return forward_with_stats(m, x, {}, false);
  if (!m.has_norm_stats) return forward_with_stats(m, x, {}, true);
  return forward_with_stats(m, x, m.norm_stats, true);
}

/// Train-mode forward that also folds the batch statistics into the model.
inline ForwardTrace forward_train(MlpModel& m, const Matrix& x) {
  auto tr = forward(m, x, Mode::train);
  if (m.arch.nonneg && !tr.hidden.empty()) update_running_stats(m, tr.stats());
  return tr;
}

/// Replaces the running statistics with the batch statistics of `x` under the
/// current weights. Training loops call this at the end of each epoch: the
/// Hebbian rule keeps shrinking weight norms, and the moving average alone
/// trails far enough behind that eval-mode activations go silent.
inline void refresh_running_stats(MlpModel& m, const Matrix& x) {
  if (!m.arch.nonneg || m.arch.hidden_dims.empty() || x.rows() == 0) return;
  const auto tr = forward(m, x, Mode::train);
  const auto s = tr.stats();
  std::copy(s.begin(), s.end(), m.norm_stats.begin());
  m.has_norm_stats = true;
}

/// Activations feeding the output layer.
inline const Matrix& final_hidden(const ForwardTrace& tr, const Matrix& x) {
  return tr.hidden.empty() ? x : tr.hidden.back().a;
}

/// Mean of -log softmax(z)[label] over rows, via log-sum-exp.
inline double cross_entropy(const Matrix& z, std::span<const int> labels) {
  if (z.rows() != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
  if (z.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double s = 0.0;
    for (double v : zr) s += std::exp(v - mx);
    total += mx + std::log(s) - zr[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(z.rows());
}

// ---------------------------------------------------------------------------
// Backward

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<double> bias;
  Matrix input;  // filled only when requested
};

/// Gradient of the mean cross-entropy for the graph recorded in `tr`, with
/// the normalisation statistics held fixed.
inline Gradients backward(const MlpModel& m, const Matrix& x, const ForwardTrace& tr,
                          std::span<const int> labels, bool want_params = true,
                          bool want_input = false) {
  const std::size_t n = x.rows();
  const std::size_t k = m.arch.output_dim;
  if (labels.size() != n) throw ShapeError("backward: label count mismatch");
  Gradients g;
  Matrix dz = tr.p;
  const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = dz.row(r);
    row[static_cast<std::size_t>(labels[r])] -= 1.0;
    for (double& v : row) v *= inv_n;
  }
  const auto L = m.arch.layers();
  if (want_params) {
    g.weights.resize(L);
    g.bias.assign(k, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) g.bias[c] += dz(r, c);
    g.weights[L - 1] = matmul_tn(final_hidden(tr, x), dz);
  }
  if (L == 1 && !want_input) return g;

  Matrix delta = matmul_nt(dz, m.weights[L - 1]);  // d loss / d a_last
  for (std::size_t l = L - 1; l-- > 0;) {
    const auto& t = tr.hidden[l];
    auto dv = delta.values();
    if (m.arch.nonneg) {
      const double inv_max = 1.0 / std::max(t.stats.max, m.arch.rescale_eps);
      const double dnorm = m.arch.beta_norm / t.stats.std;
      auto vv = t.v.values();
      auto uv = t.u.values();
      for (std::size_t i = 0; i < dv.size(); ++i) {
        const bool active = vv[i] > 0.0 && !(t.clamp && vv[i] * inv_max > 1.0);
        const double sgn = uv[i] > 0.0 ? 1.0 : (uv[i] < 0.0 ? -1.0 : 0.0);
        dv[i] = active ? dv[i] * inv_max * dnorm * sgn : 0.0;
      }
    } else {
      auto uv = t.u.values();
      for (std::size_t i = 0; i < dv.size(); ++i)
        if (!(uv[i] > 0.0)) dv[i] = 0.0;
    }
    const Matrix& in = l == 0 ? x : tr.hidden[l - 1].a;
    if (want_params) g.weights[l] = matmul_tn(in, delta);
    if (l > 0 || want_input) delta = matmul_nt(delta, m.weights[l]);
  }
  if (want_input) g.input = std::move(delta);
  return g;
}

// ---------------------------------------------------------------------------
// Prediction

inline std::vector<int> argmax_rows(const Matrix& z) {
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    // max_element returns the first maximum: ties go to the lowest class.
    out[r] = static_cast<int>(std::max_element(zr.begin(), zr.end()) - zr.begin());
  }
  return out;
}

inline constexpr std::size_t kEvalChunk = 1000;

inline std::vector<int> predict(const MlpModel& m, const Matrix& x) {
  std::vector<int> out;
  out.reserve(x.rows());
  for (std::size_t r0 = 0; r0 < x.rows(); r0 += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, x.rows() - r0));
    std::iota(idx.begin(), idx.end(), r0);
    const auto tr = forward(m, gather_rows(x, idx), Mode::eval);
    const auto pred = argmax_rows(tr.z);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

inline double accuracy(const std::vector<int>& pred, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

inline double accuracy(const MlpModel& m, const Dataset& ds) {
  if (ds.features() != m.arch.input_dim && ds.size() > 0)
    throw ShapeError("accuracy: dataset has " + std::to_string(ds.features()) +
                     " features, model expects " + std::to_string(m.arch.input_dim));
  return accuracy(predict(m, ds.inputs), ds.labels);
}

// ---------------------------------------------------------------------------
// Model file
//
//   "BIOMLP01" | version u32 | flags u32 (bit0 nonneg, bit1 stats present)
//   | layer count u32 | (in u32, out u32) per layer | beta_norm f64
//   | weights f64 row-major per layer | bias f64[K]
//   | (mean, std, max) f64 per hidden layer | SHA-256 of everything before
//
// All integers and floats little-endian. rescale_eps is not stored; loads use
// the Architecture default.

inline constexpr char kModelMagic[8] = {'B', 'I', 'O', 'M', 'L', 'P', '0', '1'};
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint32_t kFlagNonneg = 1u << 0;
inline constexpr std::uint32_t kFlagStats = 1u << 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> b) : b_(b) {}
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > b_.size()) throw FormatError(std::string("model file truncated at ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::span<const unsigned char> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_model(const MlpModel& m) {
  detail::ByteWriter w;
  w.raw(kModelMagic, sizeof kModelMagic);
  w.u32(kModelVersion);
  w.u32((m.arch.nonneg ? kFlagNonneg : 0u) | (m.has_norm_stats ? kFlagStats : 0u));
  w.u32(static_cast<std::uint32_t>(m.weights.size()));
  for (const auto& W : m.weights) {
    w.u32(static_cast<std::uint32_t>(W.rows()));
    w.u32(static_cast<std::uint32_t>(W.cols()));
  }
  w.f64(m.arch.beta_norm);
  for (const auto& W : m.weights)
    for (double v : W.values()) w.f64(v);
  for (double v : m.bias) w.f64(v);
  for (const auto& s : m.norm_stats) {
    w.f64(s.mean);
    w.f64(s.std);
    w.f64(s.max);
  }
  const auto digest = sha256(w.bytes());
  w.raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

inline MlpModel deserialize_model(std::span<const unsigned char> bytes) {
  if (bytes.size() < sizeof kModelMagic + 32) throw FormatError("model file truncated");
  if (std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0)
    throw FormatError("model file: bad magic");
  const auto body = bytes.first(bytes.size() - 32);
  const auto digest = sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.end() - 32))
    throw FormatError("model file: checksum mismatch");

  detail::ByteReader r(body);
  r.take(sizeof kModelMagic, "magic");
  if (auto v = r.u32("version"); v != kModelVersion)
    throw FormatError("model file: version " + std::to_string(v) + ", expected " +
                      std::to_string(kModelVersion));
  const auto flags = r.u32("flags");
  const auto layers = r.u32("layer count");
  if (layers == 0) throw FormatError("model file: zero layers");
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t in = r.u32("layer dims");
    const std::size_t out = r.u32("layer dims");
    if (in == 0 || out == 0) throw FormatError("model file: zero layer dimension");
    if (!dims.empty() && dims.back().second != in)
      throw FormatError("model file: layer " + std::to_string(l) + " input " +
                        std::to_string(in) + " != previous output " +
                        std::to_string(dims.back().second));
    dims.emplace_back(in, out);
  }
  MlpModel m;
  m.arch.nonneg = (flags & kFlagNonneg) != 0;
  m.has_norm_stats = (flags & kFlagStats) != 0;
  m.arch.input_dim = dims.front().first;
  m.arch.output_dim = dims.back().second;
  m.arch.hidden_dims.clear();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) m.arch.hidden_dims.push_back(dims[l].second);
  m.arch.beta_norm = r.f64("beta_norm");
  for (const auto& [in, out] : dims) {
    r.need(in * out * 8, "weights");
    std::vector<double> v(in * out);
    for (double& x : v) x = r.f64("weights");
    m.weights.emplace_back(in, out, std::move(v));
  }
  m.bias.resize(m.arch.output_dim);
  for (double& b : m.bias) b = r.f64("bias");
  m.norm_stats.resize(m.arch.hidden_dims.size());
  for (auto& s : m.norm_stats) {
    s.mean = r.f64("norm stats");
    s.std = r.f64("norm stats");
    s.max = r.f64("norm stats");
  }
  if (r.remaining() != 0) throw FormatError("model file: trailing bytes");
  m.arch.validate();
  return m;
}

/// Writes atomically: a sibling temporary file renamed over `path`.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                    text.size()));
}

inline void save_model(const MlpModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(m));
}

inline MlpModel load_model(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace biolearn
