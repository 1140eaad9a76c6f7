#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gib/scoring.hpp"
#include "oracles.hpp"

using namespace gib;

namespace {

SubtaskGaussian gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  SubtaskGaussian g;
  g.mu = mu;
  g.sigma = sigma;
  g.factor.compute(sigma);
  return g;
}

}  // namespace

TEST(Mahalanobis, DiagonalHandExample) {
  Eigen::Vector2d mu(1.0, -1.0);
  Eigen::Matrix2d s;
  s << 2.0, 0.0, 0.0, 0.5;
  const auto g = gaussian(mu, s);
  // (2,0) / sqrt(2) in the first axis: distance sqrt(4/2) = sqrt(2)
  EXPECT_NEAR(mahalanobis(Eigen::Vector2d(3.0, -1.0), g), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(mahalanobis(mu, g), 0.0);
  EXPECT_THROW(mahalanobis(Eigen::Vector3d::Zero(), g), ValidationError);
  EXPECT_THROW(mahalanobis(Eigen::Vector2d(std::nan(""), 0), g), NumericError);
}

TEST(Mahalanobis, MatchesExplicitInverseOracle) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 4;
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
    const Eigen::MatrixXd s = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd mu(d), z(d);
    for (int i = 0; i < d; ++i) mu(i) = n(rng), z(i) = n(rng);
    std::vector<oracle::Vec> rows(static_cast<std::size_t>(d));
    for (int r = 0; r < d; ++r) rows[static_cast<std::size_t>(r)] = oracle::Vec(s.row(r).begin(), s.row(r).end());
    const double ref = oracle::mahalanobis(oracle::Vec(z.begin(), z.end()), oracle::Vec(mu.begin(), mu.end()), rows);
    EXPECT_NEAR(mahalanobis(z, gaussian(mu, s)), ref, 1e-8);
  }
}

TEST(GaussianFit, TwoPointsInOneDimension) {
  RowMatrix x(2, 1);
  x << 1.0, 3.0;
  const auto g = gaussian_from_samples(x, 0);
  EXPECT_DOUBLE_EQ(g.mu(0), 2.0);
  EXPECT_DOUBLE_EQ(g.raw_covariance(0, 0), 2.0);  // ((1-2)^2 + (3-2)^2) / (2-1)
  // In one dimension shrinkage toward trace/d leaves the variance unchanged.
  EXPECT_NEAR(g.sigma(0, 0), 2.0, 1e-12);
}

TEST(GaussianFit, HandComputedShrinkage) {
  RowMatrix x(3, 2);
  x << 0, 0, 2, 0, 1, 3;
  GaussianFitOptions opt;
  opt.epsilon = 0.1;
  const auto g = gaussian_from_samples(x, 4, opt);
  EXPECT_EQ(g.subtask_index, 4);
  EXPECT_EQ(g.n_samples, 3u);
  EXPECT_NEAR(g.mu(0), 1.0, 1e-12);
  EXPECT_NEAR(g.mu(1), 1.0, 1e-12);
  // deviations (-1,-1), (1,-1), (0,2): sums of products 2, 0, 6 over n-1 = 2
  EXPECT_NEAR(g.raw_covariance(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(g.raw_covariance(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(g.raw_covariance(1, 1), 3.0, 1e-12);
  // 0.9 * S + 0.1 * (trace/2) * I with trace/2 = 2
  EXPECT_NEAR(g.sigma(0, 0), 0.9 * 1.0 + 0.2, 1e-12);
  EXPECT_NEAR(g.sigma(1, 1), 0.9 * 3.0 + 0.2, 1e-12);
  EXPECT_NEAR(g.sigma(0, 1), 0.0, 1e-12);
}

TEST(GaussianFit, FloorRescuesDegenerateCovariance) {
  RowMatrix x(4, 2);
  x << 0, 0, 0, 0, 0, 0, 0, 0;
  GaussianFitOptions opt;
  opt.epsilon = 0.0;
  opt.floor = 1e-6;
  const auto g = gaussian_from_samples(x, 0, opt);
  EXPECT_NEAR(g.sigma(0, 0), 1e-6, 1e-18);
  opt.floor = 0.0;
  EXPECT_THROW(gaussian_from_samples(x, 0, opt), NumericError);
}

TEST(GaussianFit, TooFewSamplesAndOrderIndependence) {
  EXPECT_THROW(gaussian_from_samples(RowMatrix::Zero(2, 2), 0), ValidationError);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  RowMatrix x(30, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  RowMatrix y = x.colwise().reverse();
  const auto a = sample_moments(x), b = sample_moments(y);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.covariance, b.covariance);
}

TEST(GaussianFit, PoolsOnlyBinaryOneTrajectories) {
  std::vector<RowMatrix> lat{RowMatrix::Constant(4, 1, 1.0), RowMatrix::Constant(4, 1, 100.0),
                             RowMatrix::Constant(4, 1, 3.0)};
  std::vector<SubtaskSegmentation> segs{{"a", 4, {2}, 2}, {"b", 4, {2}, 2}, {"c", 4, {}, 2}};
  const auto pooled = pool_subtask_latents(lat, segs, {1, 0, 1}, 0);
  EXPECT_EQ(pooled.rows(), 2 + 4);
  EXPECT_EQ(pooled.maxCoeff(), 3.0);
  EXPECT_EQ(pool_subtask_latents(lat, segs, {1, 0, 1}, 1).rows(), 2);
}

TEST(Scoring, MeanOfPerStepDistancesAndAbsentSubtasks) {
  const auto g0 = gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0));
  const auto g1 = gaussian(Eigen::VectorXd::Constant(1, 10.0), Eigen::MatrixXd::Constant(1, 1, 1.0));
  std::map<int, SubtaskGaussian> gs{{0, g0}, {1, g1}};
  RowMatrix z(4, 1);
  z << 2, -4, 10, 12;
  const std::vector<SubtaskSegmentation> segs{{"a", 4, {2}, 3}};
  const auto r = score_subtasks({z}, segs, gs);
  ASSERT_EQ(r.scores.size(), 3u);
  EXPECT_DOUBLE_EQ(r.scores[0].mean_score, (1.0 + 2.0) / 2);
  EXPECT_DOUBLE_EQ(r.scores[1].mean_score, (0.0 + 2.0) / 2);
  EXPECT_FALSE(r.scores[2].present);
  ASSERT_EQ(r.traces[0].records.size(), 4u);
  EXPECT_EQ(r.traces[0].records[3].subtask_index, 1);
  EXPECT_DOUBLE_EQ(r.traces[0].records[3].distance, 2.0);
}

TEST(BuildMask, PrunesTopRhoWithDeterministicTies) {
  const std::vector<SubtaskScore> s{
      {"b", 0, true, 5.0}, {"a", 1, true, 5.0}, {"a", 0, true, 1.0}, {"c", 0, true, 7.0}, {"c", 1, false, 0.0}};
  const auto m = build_mask(s, 2, "gib");
  EXPECT_EQ(m.beta("c", 0), 0);
  EXPECT_EQ(m.beta("a", 1), 0);  // tie on 5.0 broken by id
  EXPECT_EQ(m.beta("b", 0), 1);
  EXPECT_EQ(m.beta("c", 1), 0);
  EXPECT_THROW(build_mask(s, 5), ValidationError);
  EXPECT_THROW(build_mask(s, -1), ValidationError);
  const auto all = build_mask(s, 0);
  for (const auto& e : all.entries) EXPECT_EQ(e.beta, e.present ? 1 : 0);
}

// Property: for random score tables and every admissible rho, the mask keeps
// exactly present - rho subtasks and prunes the highest scores.
TEST(BuildMask, BudgetPropertyOnRandomTables) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::bernoulli_distribution absent(0.15), tie(0.2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SubtaskScore> s;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) {
        const bool present = !absent(rng);
        const double v = tie(rng) ? 2.5 : u(rng);
        s.push_back({"t" + std::to_string(i), j, present, present ? v : 0.0});
      }
    }
    const auto present = static_cast<int>(std::count_if(s.begin(), s.end(), [](auto& x) { return x.present; }));
    for (int rho = 0; rho <= present; ++rho) {
      const auto m = build_mask(s, rho);
      int kept = 0;
      double min_pruned = 1e300, max_kept = -1;
      for (const auto& e : m.entries) {
        kept += e.beta;
        if (!e.present) EXPECT_EQ(e.beta, 0);
        if (e.present && e.beta == 0) min_pruned = std::min(min_pruned, e.mean_score);
        if (e.beta == 1) max_kept = std::max(max_kept, e.mean_score);
      }
      ASSERT_EQ(kept, present - rho) << "trial " << trial << " rho " << rho;
      if (rho > 0 && kept > 0) EXPECT_GE(min_pruned, max_kept);
    }
  }
}

TEST(ScoreCsv, RoundTrips) {
  const std::vector<SubtaskScore> s{{"a", 0, true, 0.1}, {"a", 1, false, 0.0}, {"b", 0, true, 1e-17}};
  const auto path = (std::filesystem::temp_directory_path() / "gib_scores.csv").string();
  csv::write_file(path, serialize_scores(s));
  const auto r = load_scores(path);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_FALSE(r[1].present);
  EXPECT_EQ(r[2].mean_score, 1e-17);
  EXPECT_EQ(serialize_scores(r), serialize_scores(s));

  std::vector<DeviationTrace> tr{{"a", {{0, 0, 1.5}, {1, 0, 2.25}}}, {"b", {{0, 1, 0.0}}}};
  csv::write_file(path, serialize_traces(tr));
  EXPECT_EQ(serialize_traces(load_traces(path)), serialize_traces(tr));
}
