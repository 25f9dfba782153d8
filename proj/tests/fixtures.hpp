#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "biolearn/data.hpp"
#include "biolearn/numerics.hpp"

namespace fixtures {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("biolearn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

inline void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::vector<unsigned char> idx_images(const std::vector<std::vector<unsigned char>>& imgs,
                                             std::uint32_t magic = 0x00000803,
                                             std::uint32_t rows = 28, std::uint32_t cols = 28) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(imgs.size()));
  put_be32(b, rows);
  put_be32(b, cols);
  for (const auto& im : imgs) b.insert(b.end(), im.begin(), im.end());
  return b;
}

inline std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels,
                                             std::uint32_t magic = 0x00000801) {
  std::vector<unsigned char> b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

// A learnable 28x28 ten-class problem: class c lights a 4-row band starting
// at row 2c + 4, plus sparse noise.
inline std::vector<unsigned char> synthetic_digit(int cls, std::mt19937& gen) {
  std::vector<unsigned char> im(784, 0);
  std::uniform_int_distribution<int> noise(0, 99), shade(160, 255);
  const int r0 = 2 * cls + 4;
  for (int r = r0; r < r0 + 4; ++r)
    for (int c = 4; c < 24; ++c) im[static_cast<std::size_t>(r * 28 + c)] =
        static_cast<unsigned char>(shade(gen));
  for (int i = 0; i < 784; ++i)
    if (noise(gen) < 3) im[static_cast<std::size_t>(i)] = static_cast<unsigned char>(shade(gen));
  return im;
}

// Writes the four MNIST files under dir with n_train / n_test balanced samples.
inline void write_synthetic_mnist(const fs::path& dir, std::size_t n_train, std::size_t n_test,
                                  unsigned seed = 1) {
  fs::create_directories(dir);
  std::mt19937 gen(seed);
  auto make = [&](std::size_t n, const std::string& img, const std::string& lab) {
    std::vector<std::vector<unsigned char>> ims;
    std::vector<unsigned char> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(i % 10);
      ims.push_back(synthetic_digit(c, gen));
      labels.push_back(static_cast<unsigned char>(c));
    }
    write_bytes(dir / img, idx_images(ims));
    write_bytes(dir / lab, idx_labels(labels));
  };
  make(n_train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte");
  make(n_test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
}

inline biolearn::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed,
                                      double lo = -1.0, double hi = 1.0) {
  biolearn::Rng rng(seed);
  return biolearn::Matrix(r, c, biolearn::draw_uniform(rng, lo, hi, r * c));
}

inline biolearn::Dataset toy_dataset(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  biolearn::Rng rng(seed);
  biolearn::Dataset ds;
  ds.inputs = biolearn::Matrix(n, d, biolearn::draw_uniform(rng, 0.0, 1.0, n * d));
  ds.num_classes = k;
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(k)));
  return ds;
}

}  // namespace fixtures
