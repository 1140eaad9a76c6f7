#include <gtest/gtest.h>

#include "gib/bed.hpp"
#include "oracles.hpp"

using namespace gib;

namespace {

BedConfig small_config(std::uint64_t seed) {
  BedConfig c;
  c.hidden = 16;
  c.latent = 4;
  c.resample_len = 7;
  c.seed = seed;
  c.m = 0.6;
  c.h_coef = 0.3;
  c.q = 0.2;
  return c;
}

// Linear interpolation at normalized time l/(L-1), written directly.
oracle::Vec resample_at(const std::vector<oracle::Vec>& z, int l, int L) {
  const double pos = static_cast<double>(l) * (z.size() - 1) / (L - 1);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(pos), z.size() - 2);
  const double a = pos - static_cast<double>(k);
  oracle::Vec out(z[0].size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = (1 - a) * z[k][c] + a * z[k + 1][c];
  return out;
}

// Full loss recomputed with scalar loops, nominal from the same weights.
double oracle_bed_loss(const EncoderParams& p, const Dataset& d, const std::vector<double>& w, const BedConfig& c) {
  const int L = c.resample_len;
  const std::size_t n = d.size();
  std::vector<std::vector<oracle::Vec>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < d[i].length(); ++t) z[i].push_back(oracle::mlp(p, oracle::row(d[i].states, t)).z);
  }
  const std::size_t dim = z[0][0].size();
  double sw = 0.0;
  oracle::Vec G(dim, 0.0);
  std::vector<oracle::Vec> Z(L, oracle::Vec(dim, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    for (std::size_t k = 0; k < dim; ++k) G[k] += w[i] * z[i].back()[k];
    for (int l = 0; l < L; ++l) {
      const auto r = resample_at(z[i], l, L);
      for (std::size_t k = 0; k < dim; ++k) Z[l][k] += w[i] * r[k];
    }
  }
  for (auto& g : G) g /= sw;
  for (auto& r : Z) {
    for (auto& v : r) v /= sw;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ae = 0.0;
    for (int t = 0; t < d[i].length(); ++t) {
      const auto a = oracle::mlp(p, oracle::row(d[i].states, t)).a;
      for (std::size_t k = 0; k < a.size(); ++k) ae += std::pow(a[k] - d[i].actions(t, static_cast<int>(k)), 2);
    }
    ae /= d[i].length();
    const double gd = oracle::dist(z[i].back(), G);
    double pf = 0.0;
    for (int l = 0; l < L; ++l) {
      const auto r = resample_at(z[i], l, L);
      for (std::size_t k = 0; k < dim; ++k) pf += std::pow(r[k] - Z[l][k], 2);
    }
    total += c.c * w[i] * ae / n + c.h_coef * w[i] * gd + c.q * w[i] * std::sqrt(pf) / L;
  }
  const double gap = c.m * n - sw;
  return total + c.lambda_count * gap * gap;
}

}  // namespace

TEST(Resample, EndpointsAndIdentity) {
  RowMatrix z(5, 2);
  for (int t = 0; t < 5; ++t) z(t, 0) = t, z(t, 1) = t * t;
  const RowMatrix same = resample_latent(z, 5);
  EXPECT_EQ(same, z);
  const RowMatrix r = resample_latent(z, 9);
  EXPECT_EQ(r.row(0), z.row(0));
  EXPECT_EQ(r.row(8), z.row(4));
  EXPECT_DOUBLE_EQ(r(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(r(1, 1), 0.5);  // linear between 0 and 1
  EXPECT_THROW(resample_latent(z, 1), ValidationError);
  EXPECT_THROW(resample_latent(z.topRows(1), 4), ValidationError);
}

TEST(BedLoss, MatchesScalarOracle) {
  const auto d = oracle::random_dataset(4, 6, 5, 2, 17);
  const auto cfg = small_config(0);
  const auto p = initial_params(d, cfg.hidden, cfg.latent, true, 3);
  Eigen::VectorXd w(4);
  w << 0.9, 0.2, 1.0, 0.55;
  const auto loss = compute_bed_loss(p, w, d, cfg);
  const double ref = oracle_bed_loss(p, d, {0.9, 0.2, 1.0, 0.55}, cfg);
  EXPECT_NEAR(loss.total, ref, 1e-10 * std::max(1.0, std::abs(ref)));
  EXPECT_NEAR(loss.action + loss.goal + loss.path + loss.count, loss.total, 1e-12);
  EXPECT_NEAR(loss.count, cfg.lambda_count * std::pow(0.6 * 4 - 2.65, 2), 1e-12);
}

TEST(BedLoss, ZeroWeightTrajectoryDoesNotEnterNominal) {
  const auto d = oracle::random_dataset(3, 6, 5, 2, 19);
  const auto cfg = small_config(0);
  const auto p = initial_params(d, cfg.hidden, cfg.latent, true, 3);
  const BedProblem prob(d, cfg);
  Eigen::VectorXd w(3);
  w << 1.0, 0.0, 1.0;
  const auto nom = prob.nominal(p, w);
  const auto z = prob.latents(p);
  const Eigen::VectorXd expect = 0.5 * (z[0].row(z[0].rows() - 1) + z[2].row(z[2].rows() - 1)).transpose();
  EXPECT_LT((nom.goal - expect).norm(), 1e-14);
  EXPECT_THROW(prob.nominal(p, Eigen::VectorXd::Zero(3)), NumericError);
}

// Gradient of the loss with G and Z frozen, as used by the optimizer.
TEST(BedLoss, GradientsMatchFiniteDifferences) {
  const auto d = oracle::random_dataset(4, 6, 8, 2, 23);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto cfg = small_config(seed);
    const auto p0 = initial_params(d, 16, 4, true, seed);
    const BedProblem prob(d, cfg);
    Eigen::VectorXd w(4);
    w << 0.8, 0.3, 0.6, 0.95;
    const auto nom = prob.nominal(p0, w);

    LossWithGradient by_params = [&](const Eigen::VectorXd& v, Eigen::VectorXd* g) {
      Eigen::VectorXd gp, gw;
      const auto l = prob.evaluate(EncoderParams(p0.dims(), v), w, &nom, g ? &gp : nullptr, nullptr);
      if (g) *g = gp;
      return l.total;
    };
    const auto rp = grad_check(p0.values(), by_params, seed, 300);
    EXPECT_LT(rp.max_relative_error, 1e-4) << "params, seed " << seed;

    LossWithGradient by_weights = [&](const Eigen::VectorXd& v, Eigen::VectorXd* g) {
      Eigen::VectorXd gw;
      const auto l = prob.evaluate(p0, v, &nom, nullptr, g ? &gw : nullptr);
      if (g) *g = gw;
      return l.total;
    };
    const auto rw = grad_check(w, by_weights, seed, 4);
    EXPECT_LT(rw.max_relative_error, 1e-4) << "weights, seed " << seed;
  }
}

TEST(TrajectoryWeights, ClampAndStrictThreshold) {
  const auto w = TrajectoryWeights::from_raw({"a", "b", "c", "d"}, {0.5, 0.5000001, -0.2, 1.7});
  EXPECT_EQ(w.binary, (std::vector<int>{0, 1, 0, 1}));
  EXPECT_EQ(w.raw[2], 0.0);
  EXPECT_EQ(w.raw[3], 1.0);
  EXPECT_EQ(w.binary_for("b"), 1);
  EXPECT_THROW(w.binary_for("zz"), ValidationError);
}

TEST(TrajectoryWeights, CsvRoundTrip) {
  const auto w = TrajectoryWeights::from_raw({"a", "b"}, {0.123456789012345678, 0.9});
  const auto path = (std::filesystem::temp_directory_path() / "gib_weights.csv").string();
  save_weights(w, path);
  const auto r = load_weights(path);
  EXPECT_EQ(r.ids, w.ids);
  EXPECT_EQ(r.raw, w.raw);
  EXPECT_EQ(r.binary, w.binary);
  EXPECT_EQ(serialize_weights(r), serialize_weights(w));
  csv::write_file(path, "trajectory_id,raw_weight,binary\na,1.5,1\n");
  EXPECT_THROW(load_weights(path), ParseError);
}

TEST(BedConfig, Validation) {
  BedConfig c;
  EXPECT_NO_THROW(c.validate());
  c.m = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = BedConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = BedConfig{};
  c.q = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(TrainBed, DeterministicAndWeightsInRange) {
  const auto d = oracle::random_dataset(6, 8, 5, 2, 29);
  auto cfg = small_config(4);
  cfg.epochs = 40;
  const auto a = train_bed(d, cfg);
  const auto b = train_bed(d, cfg);
  EXPECT_EQ(serialize_params(a.params), serialize_params(b.params));
  EXPECT_EQ(serialize_weights(a.weights), serialize_weights(b.weights));
  EXPECT_EQ(serialize_bed_log(a.log), serialize_bed_log(b.log));
  EXPECT_EQ(a.log.size(), 40u);
  for (double r : a.weights.raw) {
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(TrainBed, SingleTrajectoryRejected) {
  const auto d = oracle::random_dataset(1, 8, 5, 2, 29);
  EXPECT_THROW(train_bed(d, small_config(0)), ValidationError);
}
