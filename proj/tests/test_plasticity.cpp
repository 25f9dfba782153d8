#include <gtest/gtest.h>

#include <cmath>

#include "biolearn/plasticity.hpp"
#include "fixtures.hpp"
#include "oja_oracles.hpp"

using namespace biolearn;

TEST(HiddenDelta, SingleSampleExample) {
  const Matrix d = hebbian_hidden_delta(Matrix{{1, 0}}, Matrix{{0.5}, {0.5}}, 0.1);
  EXPECT_NEAR(d(0, 0), 0.0375, 1e-15);
  EXPECT_NEAR(d(1, 0), -0.0125, 1e-15);
}

TEST(HiddenDelta, ZeroWeightsGiveZero) {
  const Matrix d = hebbian_hidden_delta(fixtures::random_matrix(5, 3, 1), Matrix(3, 2), 0.1);
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(HiddenDelta, DuplicatedBatchEqualsSingleSample) {
  const Matrix x{{0.3, 0.9, 0.1}};
  const Matrix xx{{0.3, 0.9, 0.1}, {0.3, 0.9, 0.1}};
  const Matrix w = fixtures::random_matrix(3, 2, 4);
  const Matrix a = hebbian_hidden_delta(x, w, 0.05);
  const Matrix b = hebbian_hidden_delta(xx, w, 0.05);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-16);
}

TEST(HiddenDelta, MatchesPerSampleFormula) {
  const Matrix x = fixtures::random_matrix(6, 4, 2);
  const Matrix w = fixtures::random_matrix(4, 3, 3);
  const double eta = 0.07;
  const Matrix d = hebbian_hidden_delta(x, w, eta);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 6; ++t) {
        std::vector<double> z(3, 0.0);
        for (std::size_t k = 0; k < 3; ++k)
          for (std::size_t u = 0; u < 4; ++u) z[k] += x(t, u) * w(u, k);
        double recon = 0.0;
        for (std::size_t k = 0; k < 3; ++k) recon += z[k] * w(i, k);
        s += eta * z[j] * (x(t, i) - recon);
      }
      EXPECT_NEAR(d(i, j), s / 6.0, 1e-14);
    }
}

TEST(OutputDelta, WorkedExample) {
  const Matrix d = hebbian_output_delta(Matrix{{1, 0}}, Matrix{{0.5, 0.2}, {0.5, 0.3}}, 0.1);
  EXPECT_NEAR(d(0, 0), 0.048, 1e-15);
  EXPECT_NEAR(d(1, 0), -0.003, 1e-15);
}

TEST(OutputDelta, MatchesExclusionFormula) {
  const Matrix h = fixtures::random_matrix(5, 4, 8, 0.0, 1.0);
  const Matrix w = fixtures::random_matrix(4, 3, 9);
  const double eta = 0.2;
  const Matrix d = hebbian_output_delta(h, w, eta);
  const Matrix z = matmul(h, w);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 5; ++t) {
        double recon = 0.0;
        for (std::size_t k = 0; k < 3; ++k)
          if (k != j) recon += z(t, k) * w(i, k);
        s += eta * z(t, j) * (h(t, i) - recon);
      }
      EXPECT_NEAR(d(i, j), s / 5.0, 1e-14);
    }
}

TEST(OutputDelta, SingleUnitIsPlainHebb) {
  const Matrix h = fixtures::random_matrix(7, 3, 1, 0.0, 1.0);
  const Matrix w = fixtures::random_matrix(3, 1, 2);
  const Matrix d = hebbian_output_delta(h, w, 0.3);
  const Matrix z = matmul(h, w);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < 7; ++t) s += 0.3 * z(t, 0) * h(t, i);
    EXPECT_NEAR(d(i, 0), s / 7.0, 1e-14);
  }
}

TEST(OutputDelta, ZeroActivityGivesZero) {
  const Matrix d = hebbian_output_delta(fixtures::random_matrix(3, 2, 1), Matrix(2, 4), 0.3);
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(Perturbation, ZeroWeightsNotPerturbed) {
  Rng rng(1);
  const Matrix w(4, 3);
  const Perturbation p = sample_perturbation(w, 0.00016, rng, false);
  for (double v : p.xi.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.apply(w), w);
}

TEST(Perturbation, StdIsSqrtSigma2) {
  Rng rng(2);
  const Matrix w(400, 250, 0.5);
  const Perturbation p = sample_perturbation(w, 0.00016, rng, false);
  double ss = 0.0;
  for (double v : p.xi.values()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(w.size())), std::sqrt(0.00016), 1e-4);
}

TEST(Perturbation, NonnegClampRecordsEffectivePerturbation) {
  const Matrix w(50, 20, 0.001);
  Rng rng(3), replay(3);
  const double sigma2 = 0.005 * 0.005;
  const Perturbation p = sample_perturbation(w, sigma2, rng, true);
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double raw = std::sqrt(sigma2) * replay.normal();
    const double xi = p.xi.values()[i];
    EXPECT_GE(w.values()[i] + xi, 0.0);
    if (0.001 + raw < 0.0) {
      EXPECT_EQ(xi, -0.001);
      ++clamped;
    } else {
      EXPECT_NEAR(xi, raw, 1e-15);
    }
  }
  EXPECT_GT(clamped, 100u);
}

TEST(Perturbation, MaskMarksNonzeroWeights) {
  Rng rng(4);
  const Matrix w{{0, 1}, {2, 0}};
  const Perturbation p = sample_perturbation(w, 0.01, rng, false);
  EXPECT_EQ(p.mask, (Matrix{{0, 1}, {1, 0}}));
  EXPECT_EQ(p.xi(0, 0), 0.0);
  EXPECT_EQ(p.xi(1, 1), 0.0);
}

TEST(WpDelta, EqualLossesGiveZero) {
  Rng rng(1);
  const Perturbation p = sample_perturbation(Matrix(3, 3, 1.0), 0.01, rng, false);
  const Matrix d = wp_delta(1.5, 1.5, p, 0.1, 0.01);
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(WpDelta, WorkedExample) {
  Perturbation p{Matrix{{0.01, 0.0}}, Matrix{{1.0, 0.0}}};
  const Matrix d = wp_delta(1.01, 1.0, p, 0.0005, 0.00016);
  EXPECT_NEAR(d(0, 0), -3.125e-4, 1e-15);
  EXPECT_EQ(d(0, 1), 0.0);
}

TEST(WpDelta, NonFiniteLossThrows) {
  Perturbation p{Matrix(1, 1), Matrix(1, 1)};
  EXPECT_THROW(wp_delta(std::nan(""), 1.0, p, 0.1, 0.1), NumericError);
}

TEST(Combined, Examples) {
  const Matrix hebb = fixtures::random_matrix(3, 2, 1);
  const Matrix zero(3, 2);
  const Matrix d = combined_output_delta(hebb, zero, 0.0005, 0.04, 87500);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_DOUBLE_EQ(d.values()[i], 0.0005 * 0.04 * hebb.values()[i]);
  const Matrix j = combined_output_delta(zero, Matrix(3, 2, 1.0), 0.0005, 0.04, 87500);
  for (double v : j.values()) EXPECT_NEAR(v, 43.75, 1e-12);
}

TEST(Combined, LinearInEachArgument) {
  const Matrix a = fixtures::random_matrix(4, 3, 1), b = fixtures::random_matrix(4, 3, 2);
  const Matrix a2 = fixtures::random_matrix(4, 3, 3), b2 = fixtures::random_matrix(4, 3, 4);
  Matrix sa = a, sb = b;
  axpy(sa, 1.0, a2);
  axpy(sb, 1.0, b2);
  const Matrix lhs = combined_output_delta(sa, sb, 0.3, 0.7, 2.0);
  Matrix rhs = combined_output_delta(a, b, 0.3, 0.7, 2.0);
  axpy(rhs, 1.0, combined_output_delta(a2, b2, 0.3, 0.7, 2.0));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.values()[i], rhs.values()[i], 1e-13);
  const Matrix c = combined_output_delta(scaled(a, 2.5), scaled(b, 2.5), 0.3, 0.7, 2.0);
  const Matrix base = combined_output_delta(a, b, 0.3, 0.7, 2.0);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.values()[i], 2.5 * base.values()[i], 1e-13);
}

TEST(BiasDelta, FixedPointAndExample) {
  const Matrix uniform(6, 10, 0.1);
  for (double v : bias_delta(uniform, 10, 0.0005, 0.04)) EXPECT_NEAR(v, 0.0, 1e-20);
  Matrix p(2, 10, 0.08);
  for (std::size_t r = 0; r < 2; ++r) p(r, 3) = 0.2;
  const auto d = bias_delta(p, 10, 0.0005, 0.04);
  EXPECT_NEAR(d[3], -2e-6, 1e-18);
}

TEST(BiasDelta, SumsToZeroForSoftmax) {
  const Matrix p = softmax_rows(fixtures::random_matrix(9, 5, 3));
  const auto d = bias_delta(p, 5, 0.01, 0.5);
  double s = 0.0;
  for (double v : d) s += v;
  EXPECT_NEAR(s, 0.0, 1e-16);
  EXPECT_THROW(bias_delta(p, 4, 0.01, 0.5), ShapeError);
}

TEST(Projection, ClampsAndIsIdempotent) {
  Matrix w{{-1, 0, 2}};
  nonneg_project(w);
  EXPECT_EQ(w, (Matrix{{0, 0, 2}}));
  const Matrix once = w;
  nonneg_project(w);
  EXPECT_EQ(w, once);
  std::vector<double> b{-0.5, 0.25};
  nonneg_project(b);
  EXPECT_EQ(b, (std::vector<double>{0.0, 0.25}));
}

TEST(Oja, SingleNeuronFindsTopEigenvector) {
  const auto r = oracles::run_subspace({4.0, 1.0}, 1, false, 0.002, 50, 5000, 11);
  EXPECT_GT(r.cos_top, 0.99);
  EXPECT_GE(r.norm, 0.97);
  EXPECT_LE(r.norm, 1.03);
}

TEST(Oja, SubspaceRuleDecorrelates) {
  const auto r = oracles::run_subspace({8, 6, 4, 3, 1, 0.5, 0.3, 0.2}, 4, true, 0.002, 100, 5000, 12);
  EXPECT_LT(r.max_gram_dev, 0.05);
  EXPECT_LT(r.max_principal_angle, 0.1);
}

namespace {

Dataset toy(std::size_t n, std::uint64_t seed) { return fixtures::toy_dataset(n, 6, 2, seed); }

MlpModel toy_model(bool nonneg, std::uint64_t seed) {
  Architecture a;
  a.input_dim = 6;
  a.hidden_dims = {5};
  a.output_dim = 2;
  a.nonneg = nonneg;
  return init_model(a, Rng(seed));
}

}  // namespace

TEST(BioStep, FollowsDocumentedOrder) {
  MlpModel m = toy_model(true, 1);
  forward_train(m, toy(10, 9).inputs);
  const Dataset ds = toy(10, 2);
  BioHyperParams hp;
  hp.eta = 0.01;
  hp.sigma2 = 0.0001;
  hp.beta_wp = 50.0;
  hp.alpha = 0.5;
  hp.gamma = 0.5;

  // oracle: compose the individual operations by hand
  MlpModel ref = m;
  Rng r1(5);
  const Perturbation p = sample_perturbation(ref.output_weights(), hp.sigma2, r1, true);
  const ForwardTrace tr = forward_train(ref, ds.inputs);
  const Matrix& h = tr.hidden[0].a;
  const double e = cross_entropy(tr.z, ds.labels);
  const double ep = cross_entropy(affine(h, p.apply(ref.output_weights()), ref.bias), ds.labels);
  const Matrix wp = wp_delta(ep, e, p, hp.eta, hp.sigma2);
  const Matrix hebb = hebbian_output_delta(h, ref.output_weights(), hp.eta);
  axpy(ref.output_weights(), 1.0, combined_output_delta(hebb, wp, hp.eta, hp.alpha, hp.beta_wp));
  const auto db = bias_delta(tr.p, 2, hp.eta, hp.gamma);
  for (std::size_t c = 0; c < 2; ++c) ref.bias[c] += db[c];
  Matrix z = tr.hidden[0].v;
  for (double& v : z.values()) v = std::max(v, 0.0);
  axpy(ref.weights[0], 1.0, hebbian_hidden_delta(ds.inputs, ref.weights[0], z, hp.eta));
  for (auto& w : ref.weights) nonneg_project(w);
  nonneg_project(ref.bias);

  Rng r2(5);
  const StepInfo info = bio_step(m, ds.inputs, ds.labels, hp, r2);
  EXPECT_EQ(info.loss, e);
  EXPECT_EQ(info.loss_perturbed, ep);
  EXPECT_EQ(serialize_model(m), serialize_model(ref));
}

TEST(HiddenActivity, IsUnrescaledReluInNonnegMode) {
  MlpModel m = toy_model(true, 1);
  const ForwardTrace tr = forward_train(m, toy(10, 9).inputs);
  const LayerTrace& t = tr.hidden[0];
  const Matrix z = hidden_activity(t);
  ASSERT_EQ(z.rows(), t.a.rows());
  double zmax = 0.0;
  for (std::size_t i = 0; i < z.values().size(); ++i) {
    EXPECT_EQ(z.values()[i], std::max(t.v.values()[i], 0.0));
    EXPECT_NEAR(z.values()[i], t.a.values()[i] * t.stats.max, 1e-12);
    zmax = std::max(zmax, z.values()[i]);
  }
  EXPECT_EQ(zmax, t.stats.max);
}

TEST(HiddenActivity, IsLayerOutputInStandardMode) {
  MlpModel m = toy_model(false, 1);
  const ForwardTrace tr = forward_train(m, toy(10, 9).inputs);
  const Matrix z = hidden_activity(tr.hidden[0]);
  ASSERT_EQ(z.values().size(), tr.hidden[0].a.values().size());
  EXPECT_TRUE(std::equal(z.values().begin(), z.values().end(), tr.hidden[0].a.values().begin()));
}

TEST(TrainBio, DeterministicToyRun) {
  const Dataset ds = toy(20, 3);
  BioHyperParams hp;
  hp.batch_size = 10;
  hp.epochs = 1;
  const auto a = train_bio(toy_model(true, 4), ds, hp, Rng(6));
  const auto b = train_bio(toy_model(true, 4), ds, hp, Rng(6));
  EXPECT_EQ(serialize_model(a.model), serialize_model(b.model));
  ASSERT_EQ(a.reports.size(), 1u);
}

TEST(TrainBio, NonnegAfterEveryStep) {
  const Dataset ds = toy(200, 4);
  BioHyperParams hp;
  hp.batch_size = 20;
  hp.epochs = 5;
  hp.eta = 0.05;
  hp.beta_wp = 2000.0;
  std::size_t steps = 0;
  TrainOptions opt;
  opt.on_step = [&](const StepInfo&, const MlpModel& m) {
    ++steps;
    for (const auto& w : m.weights)
      for (double v : w.values()) ASSERT_GE(v, 0.0);
    for (double b : m.bias) ASSERT_GE(b, 0.0);
  };
  const auto res = train_bio(toy_model(true, 5), ds, hp, Rng(7), opt);
  EXPECT_EQ(steps, 50u);
  EXPECT_EQ(res.reports.size(), 5u);
  for (const auto& r : res.reports) {
    EXPECT_GE(r.loss, 0.0);
    EXPECT_FALSE(r.test_acc.has_value());
  }
}

TEST(TrainBio, RejectsMismatchedDataset) {
  BioHyperParams hp;
  hp.batch_size = 10;
  EXPECT_THROW(train_bio(toy_model(true, 1), fixtures::toy_dataset(20, 5, 2, 1), hp, Rng(1)),
               ShapeError);
  EXPECT_THROW(train_bio(toy_model(true, 1), fixtures::toy_dataset(20, 6, 3, 1), hp, Rng(1)),
               ShapeError);
}

TEST(TrainBio, RejectsInvalidHyperParameters) {
  BioHyperParams hp;
  hp.sigma2 = 0.0;
  EXPECT_THROW(train_bio(toy_model(true, 1), toy(20, 1), hp, Rng(1)), ParameterError);
}

TEST(TrainBp, LearnsSeparableToyProblem) {
  Dataset ds = toy(200, 5);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.inputs(i, 0) = ds.labels[i] == 0 ? 0.0 : 1.0;
  for (bool nonneg : {false, true}) {
    BpParams bp;
    bp.lr = 0.5;
    bp.batch_size = 20;
    bp.epochs = 40;
    MlpModel m = toy_model(nonneg, 3);
    if (!nonneg)
      for (auto& w : m.weights) w = scaled(w, 30.0);
    const auto res = train_bp(std::move(m), ds, bp, Rng(2));
    EXPECT_LT(res.reports.back().loss, res.reports.front().loss);
    EXPECT_GT(accuracy(res.model, ds), 0.95) << (nonneg ? "nonneg" : "standard");
    if (nonneg)
      for (const auto& w : res.model.weights)
        for (double v : w.values()) ASSERT_GE(v, 0.0);
  }
}
