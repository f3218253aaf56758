#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "oracles.hpp"
#include "pagg/pagg.hpp"
#include "test_util.hpp"

using namespace pagg;

namespace {

MixtureParams params_with_pi(const Eigen::VectorXd& pi, Index d) {
  MixtureParams p;
  p.pi = pi;
  p.mu = Eigen::MatrixXd::Zero(pi.size(), d);
  p.sigma = Eigen::MatrixXd::Ones(pi.size(), d);
  return p;
}

}  // namespace

TEST(AssignmentMap, ArgmaxAndTieRule) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 6);
  q(0, 5) = 1.0;
  q.row(1).setConstant(1.0 / 6.0);
  const auto m = assignment_map(2, PosteriorMatrix{q}, params_with_pi(Eigen::VectorXd::Constant(6, 1.0 / 6), 1));
  EXPECT_EQ(m.assigned, (std::vector<Index>{5, 0}));
  EXPECT_NEAR(m.pi_hat.sum(), 1.0, 1e-9);
}

TEST(AssignmentMap, ShapeErrors) {
  const auto p = params_with_pi(Eigen::Vector2d(0.5, 0.5), 2);
  const PosteriorMatrix q{Eigen::MatrixXd::Constant(3, 2, 0.5)};
  EXPECT_THROW(assignment_map(4, q, p), ValidationError);
  EXPECT_THROW(assignment_map(Eigen::MatrixXd::Zero(3, 3), q, p), ValidationError);
  EXPECT_THROW(assignment_map(3, q, params_with_pi(Eigen::Vector3d(0.2, 0.3, 0.5), 2)), ValidationError);
  EXPECT_THROW(assignment_map(3, q, p, CoordMatrix::Zero(2, 2)), ValidationError);
}

TEST(AssignmentMap, RecoversPlantedComponents) {
  auto spec = testutil::planted_spec(4, 3, 6, 0.0, 91);
  const auto synth = generate_synthetic_cohort_with_truth(spec);
  Eigen::MatrixXd h(4, 3);
  for (Index k = 0; k < 4; ++k)
    for (Index j = 0; j < 3; ++j) h(k, j) = spec.true_components[static_cast<std::size_t>(k)].mean[static_cast<std::size_t>(j)];
  // shuffle the bank so the matching is not the identity
  const std::vector<Index> order{2, 0, 3, 1};
  const auto bank = PrototypeBank(h.cast<float>()).permuted(order);
  for (std::size_t j = 0; j < synth.cohort.size(); ++j) {
    const auto& set = synth.cohort[j];
    const auto fit = fit_set(set.features(), bank);
    const auto m = assignment_map(set.features(), fit.posteriors, fit.params, set.coords(), set.id());
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(4, 4);  // −overlap between truth k and assignment c
    for (Index n = 0; n < m.size(); ++n)
      cost(synth.component_ids[j][static_cast<std::size_t>(n)], m.assigned[static_cast<std::size_t>(n)]) -= 1.0;
    const auto match = oracle::best_matching(cost);
    EXPECT_EQ(-match.cost, static_cast<double>(m.size()));
    for (Index k = 0; k < 4; ++k) EXPECT_EQ(order[static_cast<std::size_t>(match.perm[static_cast<std::size_t>(k)])], k);
  }
}

TEST(AssignmentMap, PrototypeRelabelingEquivariance) {
  std::mt19937_64 rng(92);
  const Eigen::MatrixXd h = oracle::random_matrix(rng, 4, 2).cast<float>().cast<double>();
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 30, 2);
  const PrototypeBank bank(h.cast<float>());
  const std::vector<Index> order{3, 1, 0, 2};
  const auto a_fit = fit_set(x, bank);
  const auto b_fit = fit_set(x, bank.permuted(order));
  const auto a = assignment_map(x, a_fit.posteriors, a_fit.params);
  const auto b = assignment_map(x, b_fit.posteriors, b_fit.params);
  for (Index n = 0; n < 30; ++n)
    EXPECT_EQ(order[static_cast<std::size_t>(b.assigned[static_cast<std::size_t>(n)])], a.assigned[static_cast<std::size_t>(n)]);
  for (Index c = 0; c < 4; ++c) EXPECT_NEAR(b.pi_hat(c), a.pi_hat(order[static_cast<std::size_t>(c)]), 1e-12);
}

TEST(Heatmap, ColumnsAndPartitionOfUnity) {
  std::mt19937_64 rng(93);
  const Eigen::MatrixXd h = oracle::random_matrix(rng, 3, 2).cast<float>().cast<double>();
  const Eigen::MatrixXd x = oracle::random_matrix(rng, 20, 2);
  const auto params = init_params(PrototypeBank(h.cast<float>()));
  const auto post = e_step(x, params);
  const Eigen::MatrixXd expect = oracle::posteriors(x, params.pi, params.mu, params.sigma);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(20);
  for (Index c = 0; c < 3; ++c) {
    const auto col = prototype_heatmap(post, c);
    EXPECT_LT((col - expect.col(c)).cwiseAbs().maxCoeff(), 1e-9);
    total += col;
  }
  EXPECT_LT((total.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_THROW(prototype_heatmap(post, 3), ValidationError);
  EXPECT_EQ(prototype_heatmap(PosteriorMatrix{Eigen::MatrixXd::Ones(4, 1)}, 0), Eigen::VectorXd::Ones(4));
}

TEST(PiTable, SingleMapAndCsv) {
  const auto p = params_with_pi(Eigen::Vector2d(0.25, 0.75), 1);
  const auto m = assignment_map(1, PosteriorMatrix{Eigen::RowVector2d(0.25, 0.75)}, p, std::nullopt, "s");
  const auto t = cohort_pi_table({m}, std::vector<std::int64_t>{1});
  EXPECT_EQ(t.rows.row(0), Eigen::RowVector2d(0.25, 0.75));
  EXPECT_EQ(t.to_csv(), "id,pi0,pi1\ns,0.25,0.75\nlabel_mean:1,0.25,0.75\n");
}

TEST(PiTable, PlantedClassesSeparate) {
  auto spec = testutil::planted_spec(3, 3, 20, 1.0, 94);
  const Cohort cohort = generate_synthetic_cohort(spec);
  Eigen::MatrixXd h(3, 3);
  for (Index k = 0; k < 3; ++k)
    for (Index j = 0; j < 3; ++j) h(k, j) = spec.true_components[static_cast<std::size_t>(k)].mean[static_cast<std::size_t>(j)];
  const PrototypeBank bank(h.cast<float>());
  std::vector<AssignmentMap> maps;
  std::vector<std::int64_t> labels;
  std::size_t n_min = std::numeric_limits<std::size_t>::max();
  for (const auto& set : cohort.sets()) {
    const auto fit = fit_set(set.features(), bank);
    maps.push_back(assignment_map(set.features(), fit.posteriors, fit.params, set.coords(), set.id()));
    labels.push_back(*set.target()->class_label);
    n_min = std::min(n_min, static_cast<std::size_t>(set.size()));
  }
  const auto t = cohort_pi_table(maps, labels);
  for (Index i = 0; i < t.rows.rows(); ++i) EXPECT_NEAR(t.rows.row(i).sum(), 1.0, 1e-9);
  ASSERT_EQ(t.label_means.size(), 2u);
  const Eigen::VectorXd diff = t.label_means.at(0) - t.label_means.at(1);
  const double tol = 3.0 / std::sqrt(static_cast<double>(n_min));
  for (Index k = 0; k < 3; ++k) {
    const double gap = spec.proportion_profiles[0][static_cast<std::size_t>(k)] -
                       spec.proportion_profiles[1][static_cast<std::size_t>(k)];
    if (gap == 0.0) continue;
    EXPECT_GE(std::abs(diff(k)), std::abs(gap) - tol);
    EXPECT_EQ(diff(k) > 0, gap > 0);
  }
}

TEST(PiTable, MismatchedComponents) {
  const auto a = assignment_map(1, PosteriorMatrix{Eigen::RowVector2d(0.5, 0.5)},
                                params_with_pi(Eigen::Vector2d(0.5, 0.5), 1));
  const auto b = assignment_map(1, PosteriorMatrix{Eigen::RowVector3d(0.2, 0.3, 0.5)},
                                params_with_pi(Eigen::Vector3d(0.2, 0.3, 0.5), 1));
  EXPECT_THROW(cohort_pi_table({a, b}), ValidationError);
  EXPECT_THROW(cohort_pi_table({}), ValidationError);
}

TEST(Export, CsvAndRasters) {
  CoordMatrix coords(3, 2);
  coords << 10, 5, 11, 5, 10, 7;
  Eigen::MatrixXd q(3, 2);
  q << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
  const auto m = assignment_map(3, PosteriorMatrix{q}, params_with_pi(Eigen::Vector2d(0.5, 0.5), 1), coords, "s");
  EXPECT_EQ(assignment_csv(m), "x,y,assigned,q0,q1\n10,5,0,0.9,0.1\n11,5,1,0.2,0.8\n10,7,0,0.5,0.5\n");

  const auto r = assignment_raster(m);
  EXPECT_EQ(r.x0, 10);
  EXPECT_EQ(r.y0, 5);
  ASSERT_EQ(r.values.rows(), 3);
  ASSERT_EQ(r.values.cols(), 2);
  EXPECT_EQ(r.values(0, 0), 0.0f);
  EXPECT_EQ(r.values(0, 1), 1.0f);
  EXPECT_EQ(r.values(1, 0), -1.0f);
  EXPECT_EQ(r.values(2, 0), 0.0f);

  const auto pr = posterior_raster(m, 1);
  EXPECT_FLOAT_EQ(pr.values(0, 1), 0.8f);
  EXPECT_EQ(pr.values(1, 1), 0.0f);

  const auto pgm = encode_pgm(r, 0.0f, 1.0f);
  const std::string header = "P5\n2 3\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 6);
  EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  EXPECT_EQ(pgm[header.size() + 1], 255);
  EXPECT_EQ(pgm[header.size() + 2], 0);  // hole below lo clamps to 0

  const auto raw = encode_raw_f32(pr);
  ASSERT_EQ(raw.size(), 8u + 6 * 4);
  std::uint32_t rows = 0;
  std::memcpy(&rows, raw.data(), 4);
  EXPECT_EQ(rows, 3u);
  float v = 0;
  std::memcpy(&v, raw.data() + 8 + 4, 4);
  EXPECT_FLOAT_EQ(v, 0.8f);

  const auto nocoords = assignment_map(3, PosteriorMatrix{q}, params_with_pi(Eigen::Vector2d(0.5, 0.5), 1));
  EXPECT_THROW(assignment_raster(nocoords), ValidationError);
  EXPECT_EQ(assignment_csv(nocoords), "x,y,assigned,q0,q1\n,,0,0.9,0.1\n,,1,0.2,0.8\n,,0,0.5,0.5\n");
}
