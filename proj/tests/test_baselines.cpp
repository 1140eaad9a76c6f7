#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gib/baselines.hpp"
#include "oracles.hpp"

using namespace gib;

namespace {

std::vector<Eigen::VectorXd> random_points(int n, int d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v(d);
    for (int k = 0; k < d; ++k) v(k) = g(rng);
    out.push_back(v);
  }
  return out;
}

std::vector<oracle::Vec> as_vecs(const std::vector<Eigen::VectorXd>& pts) {
  std::vector<oracle::Vec> out;
  for (const auto& p : pts) out.emplace_back(p.begin(), p.end());
  return out;
}

}  // namespace

TEST(Lof, EqualsBruteForceReference) {
  for (unsigned seed : {1u, 2u, 3u, 4u}) {
    const auto pts = random_points(25, 3, seed);
    for (int k : {1, 3, 10}) {
      const auto got = lof_scores(pts, k);
      const auto ref = oracle::lof(as_vecs(pts), k);
      for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(got[i], ref[i]) << "seed " << seed << " k " << k;
    }
  }
}

TEST(Lof, TiesAtKDistanceEnlargeNeighbourhood) {
  // Unit square corners plus a far point: every corner has two neighbours at
  // distance 1, so with k=1 both tie and enter the neighbourhood.
  std::vector<Eigen::VectorXd> pts;
  for (auto [x, y] : {std::pair{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {5.0, 5.0}}) {
    pts.push_back(Eigen::Vector2d(x, y));
  }
  const auto got = lof_scores(pts, 1);
  const auto ref = oracle::lof(as_vecs(pts), 1);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(got[i], ref[i]);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(got[static_cast<std::size_t>(i)], 1.0);
  EXPECT_GT(got[4], 2.0);
}

TEST(Lof, DuplicatesStayFinite) {
  std::vector<Eigen::VectorXd> pts(6, Eigen::Vector2d(1.0, 1.0));
  pts.push_back(Eigen::Vector2d(3.0, 3.0));
  const auto s = lof_scores(pts, 2, 7);
  for (double v : s) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(s, lof_scores(pts, 2, 7));
}

TEST(Knn, EqualsBruteForceReference) {
  const auto pts = random_points(30, 4, 11);
  const auto v = as_vecs(pts);
  for (int k : {1, 5, 29}) {
    const auto got = knn_outlier_scores(pts, k);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(got[i], oracle::knn_distance(v, i, k));
  }
  EXPECT_THROW(knn_outlier_scores(pts, 30), ValidationError);
  EXPECT_THROW(knn_outlier_scores(pts, 0), ValidationError);
}

TEST(BaselineMask, PrunesObviousOutlierAndKeepsAbsent) {
  std::vector<SegmentFeature> f;
  auto pts = random_points(12, 2, 5);
  for (int i = 0; i < 12; ++i) f.push_back({"t" + std::to_string(i), 0, 0.1 * pts[static_cast<std::size_t>(i)]});
  f[7].mean_latent = Eigen::Vector2d(9.0, 9.0);
  const std::vector<SubtaskScore> absent{{"t0", 1, false, 0.0}};
  for (auto method : {BaselineMethod::kLof, BaselineMethod::kKnn}) {
    const auto m = baseline_mask(f, absent, method, 3, 1);
    EXPECT_EQ(m.beta("t7", 0), 0);
    EXPECT_EQ(m.present_count(), 12u);
    EXPECT_EQ(m.entries.size(), 13u);
    EXPECT_EQ(m.method, method == BaselineMethod::kLof ? "lof" : "knn");
  }
}

TEST(SegmentFeatures, MeanLatentPerSegment) {
  RowMatrix z(5, 1);
  z << 1, 3, 10, 20, 30;
  const auto f = segment_features({z}, {SubtaskSegmentation("a", 5, {2}, 3)});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_DOUBLE_EQ(f[0].mean_latent(0), 2.0);
  EXPECT_DOUBLE_EQ(f[1].mean_latent(0), 20.0);
}

TEST(FeatureCsv, RoundTrip) {
  std::vector<SegmentFeature> f{{"a", 0, Eigen::Vector2d(0.5, -1.0 / 3.0)}, {"a", 1, Eigen::Vector2d(2, 3)}};
  const std::vector<SubtaskScore> absent{{"a", 2, false, 0.0}};
  const auto path = (std::filesystem::temp_directory_path() / "gib_features.csv").string();
  csv::write_file(path, serialize_features(f, absent));
  const auto t = load_features(path);
  ASSERT_EQ(t.features.size(), 2u);
  EXPECT_EQ(t.features[0].mean_latent, f[0].mean_latent);
  ASSERT_EQ(t.absent.size(), 1u);
  EXPECT_EQ(serialize_features(t.features, t.absent), serialize_features(f, absent));
}
