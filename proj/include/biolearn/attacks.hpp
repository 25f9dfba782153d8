#pragma once

// White-box l-inf attacks (FGSM, PGD) against the eval-mode graph.
// Normalisation statistics are the model's frozen running values, so the
// input gradient is exact for the graph being attacked.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "biolearn/data.hpp"
#include "biolearn/error.hpp"
#include "biolearn/network.hpp"
#include "biolearn/numerics.hpp"

namespace biolearn {

enum class AttackMethod { fgsm, pgd };

inline constexpr double kPgdStep = 0.01;
inline constexpr std::size_t kPgdIters = 40;

struct AttackConfig {
  AttackMethod method = AttackMethod::pgd;
  double epsilon = 0.1;
  double step = kPgdStep;
  std::size_t iters = kPgdIters;
  bool random_start = false;
  std::size_t batch_size = 1000;
  std::uint64_t seed = 0;  // random_start only

  void validate() const {
    if (!(epsilon >= 0.0)) throw ParameterError("attack: epsilon must be >= 0");
    if (!(step >= 0.0)) throw ParameterError("attack: step must be >= 0");
    if (batch_size == 0) throw ParameterError("attack: batch size must be >= 1");
  }
};

/// d(mean cross-entropy)/dX for the eval-mode forward.
inline Matrix input_gradient(const MlpModel& m, const Matrix& x, std::span<const int> labels) {
  const auto tr = forward(m, x, Mode::eval);
  auto g = backward(m, x, tr, labels, /*want_params=*/false, /*want_input=*/true);
  if (!g.input.all_finite()) throw NumericError("input_gradient: non-finite gradient");
  return std::move(g.input);
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Projects x onto [x0 - eps, x0 + eps] ∩ [0, 1].
inline void project_ball(Matrix& x, const Matrix& x0, double eps) {
  auto xv = x.values();
  auto ov = x0.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double lo = std::max(0.0, ov[i] - eps);
    const double hi = std::min(1.0, ov[i] + eps);
    xv[i] = std::clamp(xv[i], lo, hi);
  }
}

}  // namespace detail

/// clip_[0,1](X + eps sign(grad)), sign(0) = 0.
inline Matrix fgsm(const MlpModel& m, const Matrix& x, std::span<const int> labels, double eps) {
  if (!(eps >= 0.0)) throw ParameterError("fgsm: epsilon must be >= 0");
  const Matrix g = input_gradient(m, x, labels);
  Matrix out = x;
  auto ov = out.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = std::clamp(ov[i] + eps * detail::sign(gv[i]), 0.0, 1.0);
  return out;
}

/// `iters` rounds of X <- Proj(X + step sign(grad)).
inline Matrix pgd(const MlpModel& m, const Matrix& x0, std::span<const int> labels,
                  const AttackConfig& cfg) {
  cfg.validate();
  Matrix x = x0;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(cfg.seed);
    for (double& v : x.values()) v += cfg.epsilon * (2.0 * rng.uniform() - 1.0);
    detail::project_ball(x, x0, cfg.epsilon);
  }
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const Matrix g = input_gradient(m, x, labels);
    auto xv = x.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += cfg.step * detail::sign(gv[i]);
    detail::project_ball(x, x0, cfg.epsilon);
  }
  return x;
}

inline Matrix attack(const MlpModel& m, const Matrix& x, std::span<const int> labels,
                     const AttackConfig& cfg) {
  return cfg.method == AttackMethod::fgsm ? fgsm(m, x, labels, cfg.epsilon)
                                          : pgd(m, x, labels, cfg);
}

struct RobustnessCurve {
  double clean_accuracy = 0.0;
  std::vector<std::pair<double, double>> points;  // (epsilon, accuracy)

  std::string to_csv(const AttackConfig& cfg) const {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof line, "# method=%s step=%.17g iters=%zu random_start=%d\n",
                  cfg.method == AttackMethod::fgsm ? "fgsm" : "pgd", cfg.step, cfg.iters,
                  cfg.random_start ? 1 : 0);
    out += line;
    out += "epsilon,accuracy\n";
    for (const auto& [e, a] : points) {
      std::snprintf(line, sizeof line, "%.17g,%.17g\n", e, a);
      out += line;
    }
    return out;
  }
};

/// Accuracy on attacked copies of `ds` for each epsilon (ascending), batch
/// by batch. An epsilon of 0 reproduces the clean accuracy.
inline RobustnessCurve robustness_sweep(const MlpModel& m, const Dataset& ds,
                                        std::span<const double> eps_list, AttackConfig cfg) {
  cfg.validate();
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] > eps_list[i - 1]))
      throw ParameterError("robustness_sweep: epsilons must be strictly increasing");
  RobustnessCurve curve;
  curve.clean_accuracy = accuracy(m, ds);
  const std::uint64_t base_seed = cfg.seed;
  for (double eps : eps_list) {
    cfg.epsilon = eps;
    std::size_t correct = 0;
    for (std::size_t r0 = 0, b = 0; r0 < ds.size(); r0 += cfg.batch_size, ++b) {
      std::vector<std::size_t> idx(std::min(cfg.batch_size, ds.size() - r0));
      std::iota(idx.begin(), idx.end(), r0);
      const Matrix x = gather_rows(ds.inputs, idx);
      std::span<const int> labels(ds.labels.data() + r0, idx.size());
      cfg.seed = Rng(base_seed).split(b).next_u64();
      const Matrix adv = eps == 0.0 ? x : attack(m, x, labels, cfg);
      const auto pred = predict(m, adv);
      for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == labels[i];
    }
    curve.points.emplace_back(
        eps, ds.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(ds.size()));
  }
  return curve;
}

}  // namespace biolearn
