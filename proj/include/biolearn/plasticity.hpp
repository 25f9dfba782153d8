#pragma once

// Learning rules and training loops.
//
// Hidden layers learn with the Oja subspace rule
//     dW = eta/N * (Xᵀ Z - W Zᵀ Z),
// with Z the layer's activity (Z = X W for a linear layer), the
// output layer with a competitive Hebbian term (the neuron's own
// contribution is left out of the reconstruction) mixed with a
// weight-perturbation estimate of the loss gradient, and the output bias with
// a homeostatic rule pulling each unit's mean activation toward 1/K.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "biolearn/analysis.hpp"
#include "biolearn/data.hpp"
#include "biolearn/error.hpp"
#include "biolearn/network.hpp"
#include "biolearn/numerics.hpp"

namespace biolearn {

// How the Hebbian and WP deltas enter the combined output update.
// literal: both deltas keep their own eta and the mix multiplies by eta again.
// eta_free: the deltas are computed with eta = 1 before mixing.
enum class MixMode { literal, eta_free };

// Signal whose batch mean the bias rule drives toward 1/K.
enum class BiasSignal { softmax, linear };

// Rule for the classification layer. bp trains it by SGD on the exact
// cross-entropy gradient while the hidden layers stay Hebbian.
enum class OutputRule { wp, bp };

struct BioHyperParams {
  double eta = 0.0005;
  double sigma2 = 0.00016;
  double alpha = 0.04;
  double beta_wp = 87500.0;
  double gamma = 0.04;
  std::size_t batch_size = 2000;
  std::size_t epochs = 100;
  bool balanced = true;
  MixMode mix = MixMode::literal;
  BiasSignal bias_signal = BiasSignal::softmax;
  OutputRule output_rule = OutputRule::wp;
  double output_lr = 1.0;  // output_rule == bp only

  void validate() const {
    if (!(eta > 0.0)) throw ParameterError("eta must be > 0");
    if (!(sigma2 > 0.0)) throw ParameterError("sigma2 must be > 0");
    if (batch_size < 1) throw ParameterError("batch size must be >= 1");
    if (output_rule == OutputRule::bp && !(output_lr > 0.0))
      throw ParameterError("output_lr must be > 0");
  }
};

struct BpParams {
  double lr = 0.1;
  std::size_t batch_size = 100;
  std::size_t epochs = 30;
  bool balanced = false;

  void validate() const {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be > 0");
    if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  }
};

struct EpochReport {
  std::size_t epoch = 0;
  double loss = 0.0;                   // mean clean training loss over the epoch
  std::optional<double> test_acc;      // absent when no evaluation set was given
  double sparsity = 0.0;               // below-threshold fraction, first layer
  double seconds = 0.0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double loss_perturbed = 0.0;
};

struct TrainOptions {
  const Dataset* eval_set = nullptr;
  std::function<void(const StepInfo&, const MlpModel&)> on_step;
  std::function<void(const EpochReport&)> on_epoch;
};

struct TrainResult {
  MlpModel model;
  std::vector<EpochReport> reports;
};

// ---------------------------------------------------------------------------
// Deltas

/// Oja subspace delta given the layer input X, weights W and postsynaptic
/// activity Z (Z = X W gives the linear rule).
/// Computed as (eta/N) (X - Z Wᵀ)ᵀ Z, which equals (eta/N)(XᵀZ - W ZᵀZ).
inline Matrix hebbian_hidden_delta(const Matrix& x, const Matrix& w, const Matrix& z,
                                   double eta) {
  if (x.cols() != w.rows() || z.rows() != x.rows() || z.cols() != w.cols())
    throw ShapeError("hebbian_hidden_delta: X " + detail::dims(x) + ", W " + detail::dims(w) +
                     ", Z " + detail::dims(z));
  Matrix residual = x;
  axpy(residual, -1.0, matmul_nt(z, w));
  Matrix d = matmul_tn(residual, z);
  const double s = x.rows() == 0 ? 0.0 : eta / static_cast<double>(x.rows());
  for (double& v : d.values()) v *= s;
  return d;
}

inline Matrix hebbian_hidden_delta(const Matrix& x, const Matrix& w, double eta) {
  return hebbian_hidden_delta(x, w, matmul(x, w), eta);
}

/// Output-layer Hebbian delta. Excluding unit j from its own reconstruction
/// adds eta * w_ij * mean_t(z_tj^2) to the subspace delta.
inline Matrix hebbian_output_delta(const Matrix& h, const Matrix& w, const Matrix& z,
                                   double eta) {
  Matrix d = hebbian_hidden_delta(h, w, z, eta);
  const std::size_t n = h.rows();
  if (n == 0) return d;
  std::vector<double> zz(w.cols(), 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    auto zr = z.row(t);
    for (std::size_t j = 0; j < zr.size(); ++j) zz[j] += zr[j] * zr[j];
  }
  for (double& v : zz) v *= eta / static_cast<double>(n);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) d(i, j) += w(i, j) * zz[j];
  return d;
}

inline Matrix hebbian_output_delta(const Matrix& h, const Matrix& w, double eta) {
  return hebbian_output_delta(h, w, matmul(h, w), eta);
}

struct Perturbation {
  Matrix xi;    // applied perturbation; zero where mask is zero
  Matrix mask;  // 1 where the weight was nonzero

  Matrix apply(const Matrix& w) const {
    Matrix out = w;
    axpy(out, 1.0, xi);
    return out;
  }
};

/// xi ~ N(0, sqrt(sigma2)) on nonzero weights. In nonneg mode the perturbed
/// weight is clamped at zero and xi records the perturbation actually applied.
inline Perturbation sample_perturbation(const Matrix& w, double sigma2, Rng& rng, bool nonneg) {
  if (!(sigma2 > 0.0)) throw ParameterError("sample_perturbation: sigma2 must be > 0");
  const double sd = std::sqrt(sigma2);
  Perturbation p{Matrix(w.rows(), w.cols()), Matrix(w.rows(), w.cols())};
  auto wv = w.values();
  auto xv = p.xi.values();
  auto mv = p.mask.values();
  for (std::size_t i = 0; i < wv.size(); ++i) {
    if (wv[i] == 0.0) continue;
    mv[i] = 1.0;
    const double raw = sd * rng.normal();
    xv[i] = nonneg ? std::max(0.0, wv[i] + raw) - wv[i] : raw;
  }
  return p;
}

/// -(eta / sigma2) (E_pert - E) xi, restricted to the mask.
inline Matrix wp_delta(double loss_perturbed, double loss, const Perturbation& p, double eta,
                       double sigma2) {
  if (!std::isfinite(loss_perturbed) || !std::isfinite(loss))
    throw NumericError("wp_delta: non-finite loss");
  const double s = -(eta / sigma2) * (loss_perturbed - loss);
  Matrix d(p.xi.rows(), p.xi.cols());
  auto dv = d.values();
  auto xv = p.xi.values();
  auto mv = p.mask.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = mv[i] != 0.0 ? s * xv[i] : 0.0;
  return d;
}

/// eta*alpha*hebb + eta*beta*wp.
inline Matrix combined_output_delta(const Matrix& hebb, const Matrix& wp, double eta,
                                    double alpha, double beta) {
  require_same_shape(hebb, wp, "combined_output_delta");
  Matrix d(hebb.rows(), hebb.cols());
  auto dv = d.values();
  auto hv = hebb.values();
  auto wv = wp.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = eta * alpha * hv[i] + eta * beta * wv[i];
  return d;
}

/// eta*gamma*(1/K - batch mean of each output unit's signal).
inline std::vector<double> bias_delta(const Matrix& signal, std::size_t k, double eta,
                                      double gamma) {
  if (signal.cols() != k)
    throw ShapeError("bias_delta: signal has " + std::to_string(signal.cols()) +
                     " columns, K=" + std::to_string(k));
  std::vector<double> mean(k, 0.0);
  for (std::size_t t = 0; t < signal.rows(); ++t) {
    auto r = signal.row(t);
    for (std::size_t c = 0; c < k; ++c) mean[c] += r[c];
  }
  std::vector<double> d(k);
  const double n = static_cast<double>(std::max<std::size_t>(signal.rows(), 1));
  for (std::size_t c = 0; c < k; ++c)
    d[c] = eta * gamma * (1.0 / static_cast<double>(k) - mean[c] / n);
  return d;
}

inline void nonneg_project(Matrix& w) {
  for (double& v : w.values()) v = std::max(0.0, v);
}
inline void nonneg_project(std::vector<double>& b) {
  for (double& v : b) v = std::max(0.0, v);
}

// ---------------------------------------------------------------------------
// Training loops

namespace detail {

inline double first_layer_sparsity(const MlpModel& m) {
  return sparsity(m.weights.front(), kDetectionThreshold).below_threshold;
}

inline void check_dataset(const MlpModel& m, const Dataset& ds, const char* who) {
  if (ds.features() != m.arch.input_dim)
    throw ShapeError(std::string(who) + ": dataset has " + std::to_string(ds.features()) +
                     " features, model expects " + std::to_string(m.arch.input_dim));
  if (static_cast<std::size_t>(ds.num_classes) != m.arch.output_dim)
    throw ShapeError(std::string(who) + ": dataset has K=" + std::to_string(ds.num_classes) +
                     ", model has " + std::to_string(m.arch.output_dim) + " outputs");
}

inline EpochReport finish_epoch(const MlpModel& m, std::size_t epoch, double loss_sum,
                                std::size_t steps, const TrainOptions& opt,
                                std::chrono::steady_clock::time_point t0) {
  EpochReport r;
  r.epoch = epoch;
  r.loss = steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
  if (opt.eval_set) r.test_acc = accuracy(m, *opt.eval_set);
  r.sparsity = first_layer_sparsity(m);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opt.on_epoch) opt.on_epoch(r);
  return r;
}

inline void sgd_output_step(MlpModel& m, const Matrix& h, const Matrix& p,
                            std::span<const int> labels, double lr) {
  const std::size_t n = h.rows();
  const std::size_t k = m.arch.output_dim;
  Matrix dz = p;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = dz.row(r);
    row[static_cast<std::size_t>(labels[r])] -= 1.0;
    for (double& v : row) v /= static_cast<double>(n);
  }
  axpy(m.output_weights(), -lr, matmul_tn(h, dz));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) m.bias[c] -= lr * dz(r, c);
}

}  // namespace detail

/// Postsynaptic activity seen by the hidden rule: ReLU(v) for a normalised
/// layer, taken before the batch-max rescale, else the layer output a.
/// Taking a instead lets the unit that sets the batch max grow unchecked:
/// its a stays near 1 however large its weights get, while every other
/// unit's a shrinks with the max.
inline Matrix hidden_activity(const LayerTrace& t) {
  if (t.v.empty()) return t.a;
  Matrix z = t.v;
  for (double& v : z.values()) v = std::max(v, 0.0);
  return z;
}

/// One bio-rule update on a batch. Returns (clean loss, perturbed loss).
inline StepInfo bio_step(MlpModel& m, const Matrix& x, std::span<const int> labels,
                         const BioHyperParams& hp, Rng& pert_rng) {
  const bool nonneg = m.arch.nonneg;
  const std::size_t k = m.arch.output_dim;
  const double eta_k = hp.mix == MixMode::literal ? hp.eta : 1.0;

  // (1) perturbation of the classification layer
  std::optional<Perturbation> pert;
  if (hp.output_rule == OutputRule::wp)
    pert = sample_perturbation(m.output_weights(), hp.sigma2, pert_rng, nonneg);

  // (2) clean forward pass with batch normalisation statistics
  const ForwardTrace tr = forward_train(m, x);
  const Matrix& h = final_hidden(tr, x);
  StepInfo info;
  info.loss = cross_entropy(tr.z, labels);
  if (!std::isfinite(info.loss)) throw NumericError("bio_step: non-finite loss");

  if (hp.output_rule == OutputRule::wp) {
    // (3)-(4) perturbed output on the same hidden activations
    const Matrix zp = affine(h, pert->apply(m.output_weights()), m.bias);
    info.loss_perturbed = cross_entropy(zp, labels);
    // (5)-(7)
    const Matrix wp = wp_delta(info.loss_perturbed, info.loss, *pert, eta_k, hp.sigma2);
    const Matrix z_lin = matmul(h, m.output_weights());
    const Matrix hebb = hebbian_output_delta(h, m.output_weights(), z_lin, eta_k);
    axpy(m.output_weights(), 1.0, combined_output_delta(hebb, wp, hp.eta, hp.alpha, hp.beta_wp));
    // (8) homeostatic bias
    const auto db = bias_delta(hp.bias_signal == BiasSignal::softmax ? tr.p : tr.z, k, hp.eta, hp.gamma);
    for (std::size_t c = 0; c < k; ++c) m.bias[c] += db[c];
  } else {
    info.loss_perturbed = info.loss;
    detail::sgd_output_step(m, h, tr.p, labels, hp.output_lr);
  }

  // (9) hidden layers, from the clean trace. The normalised activity does
  // not grow with the scale of W, which keeps the subtractive term bounded
  // for wide layers.
  for (std::size_t l = 0; l < tr.hidden.size(); ++l) {
    const Matrix& in = l == 0 ? x : tr.hidden[l - 1].a;
    axpy(m.weights[l], 1.0,
         hebbian_hidden_delta(in, m.weights[l], hidden_activity(tr.hidden[l]), hp.eta));
  }

  // (10)
  if (nonneg) {
    for (auto& w : m.weights) nonneg_project(w);
    nonneg_project(m.bias);
  }
  return info;
}

/// Full bio-rule training loop. Random streams: split(1) batches,
/// split(2) perturbations.
inline TrainResult train_bio(MlpModel model, const Dataset& train, const BioHyperParams& hp,
                             const Rng& rng, const TrainOptions& opt = {}) {
  hp.validate();
  detail::check_dataset(model, train, "train_bio");
  BatchSampler sampler(train, {hp.batch_size, hp.balanced}, rng.split(1));
  Rng pert_rng = rng.split(2);
  TrainResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    const auto batches = sampler.next_epoch();
    for (const auto& idx : batches) {
      const Matrix x = gather_rows(train.inputs, idx);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train.labels[i]);
      StepInfo info = bio_step(model, x, labels, hp, pert_rng);
      info.epoch = epoch;
      info.step = step++;
      loss_sum += info.loss;
      if (opt.on_step) opt.on_step(info, model);
    }
    if (!batches.empty()) refresh_running_stats(model, gather_rows(train.inputs, batches.back()));
    res.reports.push_back(
        detail::finish_epoch(model, epoch, loss_sum, batches.size(), opt, t0));
  }
  res.model = std::move(model);
  return res;
}

/// One SGD step on the full network. Nonneg models use the normalised
/// forward (statistics held fixed in the backward pass) and are projected
/// after the step.
inline StepInfo bp_step(MlpModel& m, const Matrix& x, std::span<const int> labels, double lr) {
  const ForwardTrace tr = forward_train(m, x);
  StepInfo info;
  info.loss = cross_entropy(tr.z, labels);
  if (!std::isfinite(info.loss)) throw NumericError("bp_step: non-finite loss");
  info.loss_perturbed = info.loss;
  const Gradients g = backward(m, x, tr, labels);
  for (std::size_t l = 0; l < m.weights.size(); ++l) axpy(m.weights[l], -lr, g.weights[l]);
  for (std::size_t c = 0; c < m.bias.size(); ++c) m.bias[c] -= lr * g.bias[c];
  if (m.arch.nonneg) {
    for (auto& w : m.weights) nonneg_project(w);
    nonneg_project(m.bias);
  }
  return info;
}

inline TrainResult train_bp(MlpModel model, const Dataset& train, const BpParams& bp,
                            const Rng& rng, const TrainOptions& opt = {}) {
  bp.validate();
  detail::check_dataset(model, train, "train_bp");
  BatchSampler sampler(train, {bp.batch_size, bp.balanced}, rng.split(1));
  TrainResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < bp.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    const auto batches = sampler.next_epoch();
    for (const auto& idx : batches) {
      const Matrix x = gather_rows(train.inputs, idx);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train.labels[i]);
      StepInfo info = bp_step(model, x, labels, bp.lr);
      info.epoch = epoch;
      info.step = step++;
      loss_sum += info.loss;
      if (opt.on_step) opt.on_step(info, model);
    }
    if (!batches.empty()) refresh_running_stats(model, gather_rows(train.inputs, batches.back()));
    res.reports.push_back(
        detail::finish_epoch(model, epoch, loss_sum, batches.size(), opt, t0));
  }
  res.model = std::move(model);
  return res;
}

}  // namespace biolearn
