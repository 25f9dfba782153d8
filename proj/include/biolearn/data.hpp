#pragma once

// Dataset loading (MNIST IDX, CIFAR-10 binary), mini-batch planning and
// few-shot subsets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "biolearn/error.hpp"
#include "biolearn/numerics.hpp"

namespace biolearn {

struct Dataset {
  Matrix inputs;            // n_samples x n_features, entries in [0, 1]
  std::vector<int> labels;  // length n_samples, values in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.cols(); }

  /// Throws FormatError if an invariant is broken.
  void validate() const {
    if (labels.size() != inputs.rows())
      throw FormatError("dataset: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(inputs.rows()) + " samples");
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw FormatError("dataset: label " + std::to_string(l) + " outside [0," +
                          std::to_string(num_classes) + ")");
    for (double v : inputs.values())
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset: input outside [0,1]");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(num_classes), 0);
    for (int l : labels) ++c[static_cast<std::size_t>(l)];
    return c;
  }
};

/// Rows `idx` of `ds`, in that order.
inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.inputs = gather_rows(ds.inputs, idx);
  out.labels.reserve(idx.size());
  for (auto i : idx) out.labels.push_back(ds.labels[i]);
  out.num_classes = ds.num_classes;
  return out;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<unsigned char> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("short read on " + path.string());
  return bytes;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s += digits[(v >> (4 * i)) & 0xF];
  return s;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair. Pixels are scaled by 1/255 and each image
/// is flattened row-major; K = 10.
inline Dataset load_mnist(const std::filesystem::path& images_path,
                          const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw FormatError("images: truncated header in " + images_path.string());
  if (lab.size() < 8) throw FormatError("labels: truncated header in " + labels_path.string());
  if (auto m = detail::be32(img, 0); m != kIdxImageMagic)
    throw FormatError("images: magic " + detail::hex32(m) + ", expected " +
                      detail::hex32(kIdxImageMagic));
  if (auto m = detail::be32(lab, 0); m != kIdxLabelMagic)
    throw FormatError("labels: magic " + detail::hex32(m) + ", expected " +
                      detail::hex32(kIdxLabelMagic));
  const std::size_t n_img = detail::be32(img, 4);
  const std::size_t h = detail::be32(img, 8);
  const std::size_t w = detail::be32(img, 12);
  const std::size_t n_lab = detail::be32(lab, 4);
  if (n_img != n_lab)
    throw FormatError("count: " + std::to_string(n_img) + " images vs " +
                      std::to_string(n_lab) + " labels");
  const std::size_t d = h * w;
  if (img.size() != 16 + n_img * d)
    throw FormatError("images: payload is " + std::to_string(img.size() - 16) +
                      " bytes, header implies " + std::to_string(n_img * d));
  if (lab.size() != 8 + n_lab)
    throw FormatError("labels: payload is " + std::to_string(lab.size() - 8) +
                      " bytes, header implies " + std::to_string(n_lab));

  Dataset ds;
  ds.num_classes = 10;
  ds.inputs = Matrix(n_img, d);
  auto v = ds.inputs.values();
  for (std::size_t i = 0; i < n_img * d; ++i) v[i] = img[16 + i] / 255.0;
  ds.labels.resize(n_lab);
  for (std::size_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= ds.num_classes)
      throw FormatError("labels: value " + std::to_string(ds.labels[i]) + " at index " +
                        std::to_string(i));
  }
  return ds;
}

inline constexpr std::size_t kCifarFeatures = 3072;
inline constexpr std::size_t kCifarRecord = 1 + kCifarFeatures;

/// Concatenates CIFAR-10 binary batch files. Features keep the stored
/// channel-major order (1024 R, 1024 G, 1024 B).
inline Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
  if (batch_paths.empty()) throw ParameterError("load_cifar10: empty file list");
  std::vector<std::vector<unsigned char>> files;
  std::size_t total = 0;
  for (const auto& p : batch_paths) {
    files.push_back(detail::read_file(p));
    if (files.back().size() % kCifarRecord != 0)
      throw FormatError("cifar10: length of " + p.string() + " (" +
                        std::to_string(files.back().size()) + ") is not a multiple of " +
                        std::to_string(kCifarRecord));
    total += files.back().size() / kCifarRecord;
  }
  Dataset ds;
  ds.num_classes = 10;
  ds.inputs = Matrix(total, kCifarFeatures);
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (const auto& f : files) {
    for (std::size_t off = 0; off < f.size(); off += kCifarRecord, ++row) {
      if (f[off] >= 10) throw FormatError("cifar10: label " + std::to_string(f[off]));
      ds.labels.push_back(f[off]);
      auto dst = ds.inputs.row(row);
      for (std::size_t j = 0; j < kCifarFeatures; ++j) dst[j] = f[off + 1 + j] / 255.0;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batches

struct BatchPlan {
  std::size_t batch_size = 2000;
  bool balanced = true;
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;
};

/// Produces epoch-by-epoch index lists for one dataset.
///
/// Unbalanced: a fresh permutation per epoch cut into floor(n/N) batches; the
/// tail is dropped. Balanced: every batch holds N/K samples of each class,
/// drawn without replacement from a per-class pool that is reshuffled when
/// exhausted (pools cycle independently across epoch boundaries); the batch
/// is then shuffled. An epoch still has floor(n/N) batches.
class BatchSampler {
 public:
  BatchSampler(const Dataset& ds, BatchPlan plan, Rng rng)
      : plan_(plan), rng_(std::move(rng)), n_(ds.size()) {
    if (plan_.batch_size == 0) throw ParameterError("batch size must be >= 1");
    if (plan_.balanced) {
      const auto k = static_cast<std::size_t>(ds.num_classes);
      if (k == 0 || plan_.batch_size % k != 0)
        throw ParameterError("balanced batches need batch size " +
                             std::to_string(plan_.batch_size) + " divisible by K=" +
                             std::to_string(k));
      per_class_ = plan_.batch_size / k;
      pools_.resize(k);
      cursor_.assign(k, 0);
      for (std::size_t i = 0; i < ds.size(); ++i)
        pools_[static_cast<std::size_t>(ds.labels[i])].push_back(i);
      for (std::size_t c = 0; c < k; ++c) {
        if (pools_[c].size() < per_class_)
          throw ParameterError("class " + std::to_string(c) + " has " +
                               std::to_string(pools_[c].size()) + " samples, batch needs " +
                               std::to_string(per_class_));
        rng_.shuffle(std::span(pools_[c]));
      }
    }
  }

  std::size_t batches_per_epoch() const { return n_ / plan_.batch_size; }

  std::vector<std::vector<std::size_t>> next_epoch() {
    const std::size_t nb = batches_per_epoch();
    std::vector<std::vector<std::size_t>> out(nb);
    if (!plan_.balanced) {
      std::vector<std::size_t> perm(n_);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng_.shuffle(std::span(perm));
      for (std::size_t b = 0; b < nb; ++b)
        out[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * plan_.batch_size),
                      perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * plan_.batch_size));
      return out;
    }
    for (auto& batch : out) {
      batch.reserve(plan_.batch_size);
      for (std::size_t c = 0; c < pools_.size(); ++c) {
        // A class is never split across a reshuffle inside one batch, so a
        // batch cannot repeat a sample.
        if (cursor_[c] + per_class_ > pools_[c].size()) {
          rng_.shuffle(std::span(pools_[c]));
          cursor_[c] = 0;
        }
        for (std::size_t i = 0; i < per_class_; ++i) batch.push_back(pools_[c][cursor_[c]++]);
      }
      rng_.shuffle(std::span(batch));
    }
    return out;
  }

 private:
  BatchPlan plan_;
  Rng rng_;
  std::size_t n_;
  std::size_t per_class_ = 0;
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> cursor_;
};

/// One epoch of materialised batches.
inline std::vector<Batch> make_batches(const Dataset& ds, const BatchPlan& plan, Rng rng) {
  BatchSampler sampler(ds, plan, std::move(rng));
  std::vector<Batch> out;
  for (const auto& idx : sampler.next_epoch()) {
    Batch b;
    b.inputs = gather_rows(ds.inputs, idx);
    for (auto i : idx) b.labels.push_back(ds.labels[i]);
    out.push_back(std::move(b));
  }
  return out;
}

/// `shots` samples per class without replacement, returned in shuffled order.
inline Dataset few_shot_subset(const Dataset& ds, std::size_t shots, Rng rng) {
  if (shots == 0) throw ParameterError("few_shot_subset: shots must be >= 1");
  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i)
    pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::vector<std::size_t> chosen;
  chosen.reserve(shots * pools.size());
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].size() < shots)
      throw ParameterError("few_shot_subset: class " + std::to_string(c) + " has only " +
                           std::to_string(pools[c].size()) + " samples, need " +
                           std::to_string(shots));
    // Partial Fisher-Yates: the first `shots` slots become a uniform sample.
    auto& p = pools[c];
    for (std::size_t i = 0; i < shots; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(p.size() - i));
      std::swap(p[i], p[j]);
      chosen.push_back(p[i]);
    }
  }
  rng.shuffle(std::span(chosen));
  return subset(ds, chosen);
}

}  // namespace biolearn
