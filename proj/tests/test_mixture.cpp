#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "pagg/mixture.hpp"
#include "test_util.hpp"

using namespace pagg;

namespace {

PrototypeBank bank_from(const Eigen::MatrixXd& h) { return PrototypeBank(h.cast<float>()); }

// Random small instance whose values are exactly representable in f32.
struct Instance {
  Eigen::MatrixXd x;
  PrototypeBank bank;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 50), dd(1, 4), cd(1, 4);
  const int N = nd(rng), d = dd(rng), C = cd(rng);
  Eigen::MatrixXd h = oracle::random_matrix(rng, C, d, 2.0).cast<float>().cast<double>();
  Eigen::MatrixXd x = oracle::random_matrix(rng, N, d, 2.0).cast<float>().cast<double>();
  return {x, bank_from(h)};
}

}  // namespace

TEST(InitParams, UniformWeightsPrototypeMeansUnitVariance) {
  Eigen::MatrixXd h(4, 3);
  h << 1, 2, 3, 4, 5, 6, 7, 8, 9, -1, -2, -3;
  const auto p = init_params(bank_from(h));
  EXPECT_TRUE(p.pi.isApprox(Eigen::VectorXd::Constant(4, 0.25)));
  EXPECT_EQ(p.mu.row(2), h.row(2));
  EXPECT_EQ(p.sigma, Eigen::MatrixXd::Ones(4, 3));
}

TEST(EStep, SingleComponentIsAllOnes) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 7, 3);
  const auto post = e_step(x, init_params(bank_from(Eigen::MatrixXd::Zero(1, 3))));
  EXPECT_EQ(post.q, Eigen::MatrixXd::Ones(7, 1));
}

TEST(EStep, MidpointIsHalfHalf) {
  Eigen::MatrixXd h(2, 2);
  h << -1, 3, 1, 3;
  Eigen::MatrixXd z(1, 2);
  z << 0, 3;
  const auto post = e_step(z, init_params(bank_from(h)));
  EXPECT_DOUBLE_EQ(post.q(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(post.q(0, 1), 0.5);
}

TEST(EStep, OneDimensionalMatchesDirectDensity) {
  MixtureParams p;
  p.pi = Eigen::Vector2d(0.5, 0.5);
  p.mu = Eigen::MatrixXd(2, 1);
  p.mu << 0, 2;
  p.sigma = Eigen::MatrixXd::Ones(2, 1);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(1, 1);
  const double a = 0.5 * std::exp(0.0) / std::sqrt(2 * M_PI);
  const double b = 0.5 * std::exp(-2.0) / std::sqrt(2 * M_PI);
  const auto post = e_step(z, p);
  EXPECT_NEAR(post.q(0, 0), a / (a + b), 1e-15);
  EXPECT_NEAR(post.q(0, 1), b / (a + b), 1e-15);
  const auto direct = e_step(z, p, false);
  EXPECT_NEAR(direct.q(0, 0), a / (a + b), 1e-15);
}

TEST(EStep, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    MixtureParams p = init_params(inst.bank);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (Index i = 0; i < p.sigma.size(); ++i) p.sigma.data()[i] = u(rng);
    for (Index c = 0; c < p.pi.size(); ++c) p.pi(c) = u(rng);
    p.pi /= p.pi.sum();
    const auto got = e_step(inst.x, p);
    const auto expect = oracle::posteriors(inst.x, p.pi, p.mu, p.sigma);
    EXPECT_LT((got.q - expect).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(EStep, LogSpaceSurvivesWhereDirectUnderflows) {
  Eigen::MatrixXd h(2, 1);
  h << 0, 1;
  Eigen::MatrixXd z(2, 1);
  z << 0.5, 1000;
  const auto p = init_params(bank_from(h));
  const auto post = e_step(z, p);
  EXPECT_NEAR(post.q.row(1).sum(), 1.0, 1e-12);
  EXPECT_GT(post.q(1, 1), 0.999);
  try {
    e_step(z, p, false);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(EStep, ShapeMismatch) {
  const auto p = init_params(bank_from(Eigen::MatrixXd::Identity(2, 3)));
  EXPECT_THROW(e_step(Eigen::MatrixXd::Zero(4, 2), p), ValidationError);
}

TEST(MStep, UniformResponsibilitiesGiveGlobalMean) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 30, 3);
  const PosteriorMatrix post{Eigen::MatrixXd::Constant(30, 5, 0.2)};
  const auto p = m_step(x, post);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  for (Index c = 0; c < 5; ++c) {
    EXPECT_NEAR(p.pi(c), 0.2, 1e-15);
    EXPECT_LT((p.mu.row(c) - mean).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MStep, OneHotGroupsGiveGroupMomentsFloored) {
  Eigen::MatrixXd x(5, 2);
  x << 0, 1, 2, 1, 4, 1, 10, 10, 12, 10;
  PosteriorMatrix post{Eigen::MatrixXd::Zero(5, 2)};
  for (int n = 0; n < 3; ++n) post.q(n, 0) = 1;
  for (int n = 3; n < 5; ++n) post.q(n, 1) = 1;
  const double floor = 1e-4;
  const auto p = m_step(x, post, floor);
  EXPECT_DOUBLE_EQ(p.pi(0), 0.6);
  EXPECT_DOUBLE_EQ(p.pi(1), 0.4);
  EXPECT_DOUBLE_EQ(p.mu(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(p.mu(1, 0), 11.0);
  EXPECT_DOUBLE_EQ(p.sigma(0, 0), 8.0 / 3.0);  // biased
  EXPECT_DOUBLE_EQ(p.sigma(0, 1), floor);      // zero variance -> floor
  EXPECT_DOUBLE_EQ(p.sigma(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.sigma(1, 1), floor);
}

TEST(MStep, SinglePointSingleComponent) {
  Eigen::MatrixXd z(1, 3);
  z << 1, -2, 3;
  const auto p = m_step(z, PosteriorMatrix{Eigen::MatrixXd::Ones(1, 1)}, 1e-3);
  EXPECT_EQ(p.pi(0), 1.0);
  EXPECT_EQ(p.mu.row(0), z.row(0));
  EXPECT_EQ(p.sigma, Eigen::MatrixXd::Constant(1, 3, 1e-3));
}

TEST(MStep, DegenerateComponentIsFrozenNotNaN) {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  PosteriorMatrix post{Eigen::MatrixXd::Zero(3, 2)};
  post.q.col(0).setOnes();
  MixtureParams prev = init_params(bank_from((Eigen::MatrixXd(2, 1) << 0, 100).finished()));
  prev.sigma(1, 0) = 7.0;
  const auto p = m_step(x, post, 1e-4, &prev);
  ASSERT_EQ(p.frozen, std::vector<Index>{1});
  EXPECT_EQ(p.pi(1), 0.0);
  EXPECT_EQ(p.mu(1, 0), 100.0);
  EXPECT_EQ(p.sigma(1, 0), 7.0);
  EXPECT_NO_THROW(p.validate(1e-4));
  const auto no_prev = m_step(x, post, 1e-4);
  EXPECT_TRUE(no_prev.mu.allFinite());
  EXPECT_TRUE(no_prev.sigma.allFinite());
}

TEST(MStep, MatchesWeightedMomentOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng);
    const auto post = e_step(inst.x, init_params(inst.bank));
    const auto p = m_step(inst.x, post, 1e-12);
    for (Index c = 0; c < p.components(); ++c) {
      const auto m = oracle::weighted_moments(inst.x, post.q.col(c));
      if (m.mass < kDegenerateMass) continue;
      EXPECT_NEAR(p.pi(c), m.mass / static_cast<double>(inst.x.rows()), 1e-12);
      EXPECT_LT((p.mu.row(c) - m.mean).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((p.sigma.row(c) - m.var.cwiseMax(1e-12)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(FitSet, OneStepEqualsComposition) {
  std::mt19937_64 rng(9);
  auto inst = random_instance(rng);
  const auto fit = fit_set(inst.x, inst.bank);
  const auto q = e_step(inst.x, init_params(inst.bank));
  const auto p = m_step(inst.x, q);
  EXPECT_EQ(fit.posteriors.q, q.q);
  EXPECT_EQ(fit.params.pi, p.pi);
  EXPECT_EQ(fit.params.mu, p.mu);
  EXPECT_EQ(fit.params.sigma, p.sigma);
}

TEST(FitSet, RecoversPlantedProportionsInOneDimension) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution first(0.3);
  Eigen::MatrixXd x(2000, 1);
  for (Index n = 0; n < x.rows(); ++n) x(n, 0) = (first(rng) ? -4.0 : 4.0) + g(rng);
  EmConfig cfg;
  cfg.num_steps = 10;
  const auto fit = fit_set(x, bank_from((Eigen::MatrixXd(2, 1) << -4, 4).finished()), cfg);
  EXPECT_NEAR(fit.params.pi(0), 0.3, 0.05);
  EXPECT_NEAR(fit.params.pi(1), 0.7, 0.05);
}

TEST(FitSet, LogLikelihoodMonotoneOverTenSteps) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = random_instance(rng);
    EmConfig cfg;
    cfg.num_steps = 10;
    cfg.record_likelihood = true;
    const auto fit = fit_set(inst.x, inst.bank, cfg);
    ASSERT_EQ(fit.log_likelihood.size(), 11u);
    for (std::size_t t = 1; t < fit.log_likelihood.size(); ++t) {
      const double prev = fit.log_likelihood[t - 1];
      EXPECT_GE(fit.log_likelihood[t], prev - 1e-8 * std::abs(prev)) << "trial " << trial;
    }
    EXPECT_NEAR(fit.log_likelihood.back(), log_likelihood(inst.x, fit.params),
                1e-12 * std::abs(fit.log_likelihood.back()));
  }
}

TEST(FitSet, SingleComponentRecoversSampleMoments) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 25, 3, 0.5);
  const auto fit = fit_set(x, bank_from(Eigen::MatrixXd::Zero(1, 3)));
  EXPECT_DOUBLE_EQ(fit.params.pi(0), 1.0);
  const auto m = oracle::weighted_moments(x, Eigen::VectorXd::Ones(25));
  EXPECT_LT((fit.params.mu.row(0) - m.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fit.params.sigma.row(0) - m.var.cwiseMax(1e-4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitSet, RowPermutationEquivariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng);
    std::vector<Index> perm(static_cast<std::size_t>(inst.x.rows()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd xp(inst.x.rows(), inst.x.cols());
    for (Index i = 0; i < xp.rows(); ++i) xp.row(i) = inst.x.row(perm[static_cast<std::size_t>(i)]);
    EmConfig cfg;
    cfg.num_steps = 3;
    const auto a = fit_set(inst.x, inst.bank, cfg);
    const auto b = fit_set(xp, inst.bank, cfg);
    EXPECT_LT((a.params.pi - b.params.pi).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.params.mu - b.params.mu).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.params.sigma - b.params.sigma).cwiseAbs().maxCoeff(), 1e-9);
    for (Index i = 0; i < xp.rows(); ++i)
      EXPECT_LT((b.posteriors.q.row(i) - a.posteriors.q.row(perm[static_cast<std::size_t>(i)]))
                    .cwiseAbs()
                    .maxCoeff(),
                1e-9);
  }
}

TEST(FitSet, PrototypeRelabelingEquivariance) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng);
    const Index C = inst.bank.size();
    std::vector<Index> order(static_cast<std::size_t>(C));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    EmConfig cfg;
    cfg.num_steps = 2;
    const auto a = fit_set(inst.x, inst.bank, cfg);
    const auto b = fit_set(inst.x, inst.bank.permuted(order), cfg);
    for (Index c = 0; c < C; ++c) {
      const Index src = order[static_cast<std::size_t>(c)];
      EXPECT_NEAR(b.params.pi(c), a.params.pi(src), 1e-12);
      EXPECT_LT((b.params.mu.row(c) - a.params.mu.row(src)).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((b.params.sigma.row(c) - a.params.sigma.row(src)).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((b.posteriors.q.col(c) - a.posteriors.q.col(src)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(FitSet, InvariantsHoldOnRandomInputs) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng);
    EmConfig cfg;
    cfg.num_steps = 1 + trial % 5;
    const auto fit = fit_set(inst.x, inst.bank, cfg);
    EXPECT_NO_THROW(fit.params.validate(cfg.var_floor));
    for (Index n = 0; n < fit.posteriors.q.rows(); ++n)
      EXPECT_NEAR(fit.posteriors.q.row(n).sum(), 1.0, 1e-9);
    EXPECT_TRUE((fit.posteriors.q.array() >= 0.0).all() && (fit.posteriors.q.array() <= 1.0).all());
  }
}

TEST(LogLikelihood, StandardNormalAtMode) {
  MixtureParams p;
  p.pi = Eigen::VectorXd::Ones(1);
  p.mu = Eigen::MatrixXd::Zero(1, 1);
  p.sigma = Eigen::MatrixXd::Ones(1, 1);
  EXPECT_NEAR(log_likelihood(Eigen::MatrixXd::Zero(1, 1), p), -0.5 * std::log(2 * M_PI), 1e-15);
}

TEST(LogLikelihood, SampleMeanBeatsShiftedMean) {
  std::mt19937_64 rng(16);
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 40, 2);
  MixtureParams p;
  p.pi = Eigen::VectorXd::Ones(1);
  p.mu = x.colwise().mean();
  p.sigma = Eigen::MatrixXd::Ones(1, 2);
  MixtureParams shifted = p;
  shifted.mu.array() += 0.3;
  EXPECT_GE(log_likelihood(x, p), log_likelihood(x, shifted));
}

TEST(LogLikelihood, MatchesDirectDensityOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng);
    const auto p = fit_set(inst.x, inst.bank).params;
    const double expect = oracle::mixture_log_likelihood(inst.x, p.pi, p.mu, p.sigma);
    EXPECT_NEAR(log_likelihood(inst.x, p), expect, 1e-9 * std::max(1.0, std::abs(expect)));
  }
}
