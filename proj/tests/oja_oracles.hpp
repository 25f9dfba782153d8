#pragma once

// Oja / subspace-rule experiments on synthetic Gaussian data, checked against
// an eigendecomposition of the sample covariance. Shared by the unit tests
// and the acceptance binary.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "biolearn/numerics.hpp"
#include "biolearn/plasticity.hpp"

namespace oracles {

struct SubspaceResult {
  double max_gram_dev = 0.0;        // max |WᵀW - I| entry
  double max_principal_angle = 0.0; // radians, span(W) vs top-m eigenvectors
  double cos_top = 0.0;             // |cos| between w and e1 (m == 1)
  double norm = 0.0;                // |w| (m == 1)
};

// Gaussian samples with covariance R diag(spectrum) Rᵀ, R a random rotation
// (identity when rotate is false).
inline biolearn::Matrix gaussian_batch(biolearn::Rng& rng, const Eigen::MatrixXd& root,
                                       std::size_t n) {
  const auto d = static_cast<std::size_t>(root.rows());
  biolearn::Matrix x(n, d);
  Eigen::VectorXd g(static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
    const Eigen::VectorXd s = root * g;
    for (std::size_t i = 0; i < d; ++i) x(t, i) = s(static_cast<Eigen::Index>(i));
  }
  return x;
}

inline SubspaceResult run_subspace(const std::vector<double>& spectrum, std::size_t m,
                                   bool rotate, double eta, std::size_t batch, std::size_t steps,
                                   std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(spectrum.size());
  biolearn::Rng rng(seed);
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(d, d);
  if (rotate) {
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    rot = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  }
  Eigen::VectorXd sd(d);
  for (Eigen::Index i = 0; i < d; ++i) sd(i) = std::sqrt(spectrum[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd root = rot * sd.asDiagonal();

  biolearn::Matrix w(static_cast<std::size_t>(d), m,
                     biolearn::draw_normal(rng, 0.0, 0.1, static_cast<std::size_t>(d) * m));
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  std::size_t seen = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const biolearn::Matrix x = gaussian_batch(rng, root, batch);
    biolearn::axpy(w, 1.0, biolearn::hebbian_hidden_delta(x, w, eta));
    for (std::size_t t = 0; t < batch; ++t) {
      Eigen::VectorXd v(d);
      for (Eigen::Index i = 0; i < d; ++i) v(i) = x(t, static_cast<std::size_t>(i));
      scatter += v * v.transpose();
    }
    seen += batch;
  }
  const Eigen::MatrixXd cov = scatter / static_cast<double>(seen);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // eigenvalues ascending: the top-m eigenvectors are the last m columns
  const Eigen::MatrixXd top = eig.eigenvectors().rightCols(static_cast<Eigen::Index>(m));

  Eigen::MatrixXd W(d, static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < d; ++i)
    for (std::size_t j = 0; j < m; ++j) W(i, static_cast<Eigen::Index>(j)) = w(static_cast<std::size_t>(i), j);

  SubspaceResult r;
  const Eigen::MatrixXd gram = W.transpose() * W;
  r.max_gram_dev =
      (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(W).householderQ() *
                            Eigen::MatrixXd::Identity(d, static_cast<Eigen::Index>(m));
  const Eigen::VectorXd cosines = Eigen::JacobiSVD<Eigen::MatrixXd>(q.transpose() * top).singularValues();
  r.max_principal_angle = std::acos(std::min(1.0, cosines.minCoeff()));
  if (m == 1) {
    r.norm = W.col(0).norm();
    r.cos_top = std::abs(W.col(0).dot(top.col(0))) / r.norm;
  }
  return r;
}

}  // namespace oracles
