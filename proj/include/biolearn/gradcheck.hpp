#pragma once

// Central finite-difference check of the hand-written backward pass.
//
// Parameter gradients are checked on the train-mode graph with the batch
// statistics frozen, input gradients on the eval-mode graph that the attacks
// differentiate. Errors are relative in the 2-norm per gradient block:
//     |g - fd| / max(|g|, |fd|, 1e-12).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "biolearn/attacks.hpp"
#include "biolearn/network.hpp"
#include "biolearn/numerics.hpp"

namespace biolearn {

inline constexpr double kParamTolerance = 1e-5;
inline constexpr double kInputTolerance = 1e-4;

struct GradcheckOptions {
  std::size_t nets = 10;
  std::size_t input_dim = 6;
  std::vector<std::size_t> hidden{4};
  std::size_t classes = 3;
  std::size_t batch = 5;
  double step = 1e-6;
  std::uint64_t seed = 7;
  bool inject_sign_bug = false;  // flips the first layer's weight gradient
};

struct BlockError {
  std::string name;  // "W0", "W1", ..., "b", "input"
  double max_rel_err = 0.0;
};

struct GradcheckReport {
  bool nonneg = false;
  std::size_t nets = 0;
  std::vector<BlockError> blocks;  // maxima over all nets
  bool passed = false;
};

namespace detail {

inline double rel_err(std::span<const double> g, std::span<const double> fd) {
  double dd = 0.0, gg = 0.0, ff = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    dd += (g[i] - fd[i]) * (g[i] - fd[i]);
    gg += g[i] * g[i];
    ff += fd[i] * fd[i];
  }
  return std::sqrt(dd) / std::max({std::sqrt(gg), std::sqrt(ff), 1e-12});
}

template <typename Loss>
std::vector<double> central_diff(std::span<double> params, double h, Loss&& loss) {
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

inline MlpModel random_net(const GradcheckOptions& o, bool nonneg, Rng& rng) {
  Architecture a;
  a.input_dim = o.input_dim;
  a.hidden_dims = o.hidden;
  a.output_dim = o.classes;
  a.nonneg = nonneg;
  MlpModel m = init_model(a, rng);
  // Larger weights than the training init keep every gradient well above
  // the finite-difference noise floor.
  for (auto& w : m.weights)
    for (double& v : w.values()) v = nonneg ? 0.01 + 0.99 * rng.uniform() : 0.5 * rng.normal();
  for (double& b : m.bias) b = nonneg ? 0.5 * rng.uniform() : 0.5 * rng.normal();
  return m;
}

}  // namespace detail

inline GradcheckReport gradcheck(const GradcheckOptions& o, bool nonneg) {
  GradcheckReport rep;
  rep.nonneg = nonneg;
  rep.nets = o.nets;
  const std::size_t nl = o.hidden.size() + 1;
  for (std::size_t l = 0; l < nl; ++l) rep.blocks.push_back({"W" + std::to_string(l), 0.0});
  rep.blocks.push_back({"b", 0.0});
  rep.blocks.push_back({"input", 0.0});

  Rng rng = Rng(o.seed).split(nonneg ? 1 : 0);
  for (std::size_t n = 0; n < o.nets; ++n) {
    MlpModel m = detail::random_net(o, nonneg, rng);
    Matrix x(o.batch, o.input_dim, draw_uniform(rng, 0.05, 0.95, o.batch * o.input_dim));
    std::vector<int> labels(o.batch);
    for (int& y : labels) y = static_cast<int>(rng.below(o.classes));

    // parameters: batch statistics frozen at their clean values
    const ForwardTrace tr = forward(m, x, Mode::train);
    const auto stats = tr.stats();
    Gradients g = backward(m, x, tr, labels, true, false);
    if (o.inject_sign_bug)
      for (double& v : g.weights.front().values()) v = -v;
    auto loss = [&] { return cross_entropy(forward_with_stats(m, x, stats, false).z, labels); };
    for (std::size_t l = 0; l < nl; ++l) {
      const auto fd = detail::central_diff(m.weights[l].values(), o.step, loss);
      rep.blocks[l].max_rel_err =
          std::max(rep.blocks[l].max_rel_err, detail::rel_err(g.weights[l].values(), fd));
    }
    const auto fdb = detail::central_diff(std::span<double>(m.bias), o.step, loss);
    rep.blocks[nl].max_rel_err =
        std::max(rep.blocks[nl].max_rel_err, detail::rel_err(g.bias, fdb));

    // inputs: eval graph with running statistics from another batch
    if (nonneg) {
      Matrix warm(o.batch, o.input_dim, draw_uniform(rng, 0.05, 0.95, o.batch * o.input_dim));
      forward_train(m, warm);
    }
    const Matrix gi = input_gradient(m, x, labels);
    Matrix xp = x;
    auto eval_loss = [&] { return cross_entropy(forward(m, xp, Mode::eval).z, labels); };
    const auto fdi = detail::central_diff(xp.values(), o.step, eval_loss);
    rep.blocks[nl + 1].max_rel_err =
        std::max(rep.blocks[nl + 1].max_rel_err, detail::rel_err(gi.values(), fdi));
  }
  rep.passed = std::all_of(rep.blocks.begin(), rep.blocks.end(), [](const BlockError& b) {
    const double tol = b.name == "input" ? kInputTolerance : kParamTolerance;
    return b.max_rel_err < tol;
  });
  return rep;
}

}  // namespace biolearn
