#pragma once

// Stage 2: per-subtask latent Gaussians, Mahalanobis deviation scores and
// the top-rho pruning mask.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "gib/bed.hpp"
#include "gib/dataset.hpp"
#include "gib/error.hpp"

namespace gib {

struct GaussianFitOptions {
  double epsilon = 0.05;  // shrinkage toward (trace/d) * I
  double floor = 1e-9;    // added to the diagonal when the shrunk matrix is not safely positive definite; <= 0 disables
};

struct SubtaskGaussian {
  int subtask_index = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;           // regularized
  Eigen::MatrixXd raw_covariance;  // sample covariance, divisor n-1
  std::size_t n_samples = 0;
  Eigen::LLT<Eigen::MatrixXd> factor;

  int dim() const { return static_cast<int>(mu.size()); }
};

struct SampleMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t n = 0;
};

// Mean and unbiased covariance of the rows of `x`. Rows are visited in
// lexicographic order so the result does not depend on the input order.
inline SampleMoments sample_moments(const RowMatrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = x.cols();
  if (n < 2) throw ValidationError("need at least 2 samples for a covariance");
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&x](Eigen::Index a, Eigen::Index b) {
    return std::lexicographical_compare(x.row(a).begin(), x.row(a).end(), x.row(b).begin(), x.row(b).end());
  });
  SampleMoments m;
  m.n = n;
  m.mean = Eigen::VectorXd::Zero(d);
  for (auto r : order) m.mean += x.row(r).transpose();
  m.mean /= static_cast<double>(n);
  m.covariance = Eigen::MatrixXd::Zero(d, d);
  for (auto r : order) {
    const Eigen::VectorXd c = x.row(r).transpose() - m.mean;
    m.covariance.noalias() += c * c.transpose();
  }
  m.covariance /= static_cast<double>(n - 1);
  return m;
}

inline SubtaskGaussian gaussian_from_samples(const RowMatrix& pooled, int subtask_index,
                                             const GaussianFitOptions& opt = {}) {
  const auto d = pooled.cols();
  if (pooled.rows() < d + 1) {
    throw ValidationError("subtask " + std::to_string(subtask_index) + " has " + std::to_string(pooled.rows()) +
                          " pooled latent samples, need at least " + std::to_string(d + 1));
  }
  if (!pooled.allFinite()) throw NumericError("non-finite latent in subtask " + std::to_string(subtask_index));
  const auto m = sample_moments(pooled);
  SubtaskGaussian g;
  g.subtask_index = subtask_index;
  g.mu = m.mean;
  g.raw_covariance = m.covariance;
  g.n_samples = m.n;

  Eigen::MatrixXd s = m.covariance;
  if (opt.epsilon > 0.0) {
    const double avg = s.trace() / static_cast<double>(d);
    s = (1.0 - opt.epsilon) * s;
    s.diagonal().array() += opt.epsilon * avg;
  }
  s = 0.5 * (s + s.transpose());
  if (opt.floor > 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < opt.floor) s.diagonal().array() += opt.floor;
  }
  g.sigma = s;
  g.factor.compute(s);
  if (g.factor.info() != Eigen::Success) {
    throw NumericError("covariance of subtask " + std::to_string(subtask_index) + " is not positive definite");
  }
  return g;
}

// Pools the latents of subtask j over trajectories whose binary weight is 1.
inline RowMatrix pool_subtask_latents(const std::vector<RowMatrix>& latents,
                                      const std::vector<SubtaskSegmentation>& segs,
                                      const std::vector<int>& binary_weights, int j) {
  if (latents.size() != segs.size() || latents.size() != binary_weights.size()) {
    throw ValidationError("latents, segmentations and weights must cover the same trajectories");
  }
  Eigen::Index rows = 0, d = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    d = latents[i].cols();
    if (binary_weights[i] != 1 || !segs[i].present(j)) continue;
    const auto [b, e] = segs[i].segment(j);
    rows += e - b;
  }
  RowMatrix pooled(rows, d);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (binary_weights[i] != 1 || !segs[i].present(j)) continue;
    if (latents[i].rows() != segs[i].length()) {
      throw ValidationError("latent length does not match segmentation for '" + segs[i].trajectory_id() + "'");
    }
    const auto [b, e] = segs[i].segment(j);
    pooled.middleRows(r, e - b) = latents[i].middleRows(b, e - b);
    r += e - b;
  }
  return pooled;
}

inline SubtaskGaussian fit_subtask_gaussian(const std::vector<RowMatrix>& latents,
                                            const std::vector<SubtaskSegmentation>& segs,
                                            const std::vector<int>& binary_weights, int j,
                                            const GaussianFitOptions& opt = {}) {
  return gaussian_from_samples(pool_subtask_latents(latents, segs, binary_weights, j), j, opt);
}

inline int max_subtasks(const std::vector<SubtaskSegmentation>& segs) {
  int k = 0;
  for (const auto& s : segs) k = std::max(k, s.k_expected());
  return k;
}

// One Gaussian per subtask index that is present in any trajectory.
inline std::map<int, SubtaskGaussian> fit_all_subtasks(const std::vector<RowMatrix>& latents,
                                                       const std::vector<SubtaskSegmentation>& segs,
                                                       const std::vector<int>& binary_weights,
                                                       const GaussianFitOptions& opt = {}) {
  std::map<int, SubtaskGaussian> out;
  const int k = max_subtasks(segs);
  for (int j = 0; j < k; ++j) {
    const bool any = std::any_of(segs.begin(), segs.end(), [j](const auto& s) { return s.present(j); });
    if (any) out.emplace(j, fit_subtask_gaussian(latents, segs, binary_weights, j, opt));
  }
  return out;
}

inline double mahalanobis(const Eigen::Ref<const Eigen::VectorXd>& z, const SubtaskGaussian& g) {
  if (z.size() != g.mu.size()) throw ValidationError("latent dimension does not match the Gaussian");
  if (!z.allFinite()) throw NumericError("mahalanobis: non-finite latent");
  const Eigen::VectorXd y = g.factor.matrixL().solve(z - g.mu);
  return std::sqrt(y.squaredNorm());
}

// ---------------------------------------------------------------------------
// Scoring

struct SubtaskScore {
  std::string trajectory_id;
  int subtask_index = 0;
  bool present = true;
  double mean_score = 0.0;
};

struct TraceRecord {
  int t = 0;
  int subtask_index = 0;
  double distance = 0.0;
};

struct DeviationTrace {
  std::string trajectory_id;
  std::vector<TraceRecord> records;
};

struct ScoreResult {
  std::vector<SubtaskScore> scores;
  std::vector<DeviationTrace> traces;
};

// Scores every subtask of every trajectory (not only the good ones).
inline ScoreResult score_subtasks(const std::vector<RowMatrix>& latents, const std::vector<SubtaskSegmentation>& segs,
                                  const std::map<int, SubtaskGaussian>& gaussians) {
  if (latents.size() != segs.size()) throw ValidationError("latents and segmentations must align");
  ScoreResult out;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const auto& seg = segs[i];
    const auto& z = latents[i];
    if (z.rows() != seg.length()) {
      throw ValidationError("latent length does not match segmentation for '" + seg.trajectory_id() + "'");
    }
    DeviationTrace trace{seg.trajectory_id(), {}};
    for (int j = 0; j < seg.k_expected(); ++j) {
      if (!seg.present(j)) {
        out.scores.push_back({seg.trajectory_id(), j, false, 0.0});
        continue;
      }
      const auto it = gaussians.find(j);
      if (it == gaussians.end()) throw ValidationError("no Gaussian fitted for subtask " + std::to_string(j));
      const auto [b, e] = seg.segment(j);
      double sum = 0.0;
      for (int t = b; t < e; ++t) {
        const double dist = mahalanobis(z.row(t).transpose(), it->second);
        trace.records.push_back({t, j, dist});
        sum += dist;
      }
      out.scores.push_back({seg.trajectory_id(), j, true, sum / static_cast<double>(e - b)});
    }
    out.traces.push_back(std::move(trace));
  }
  return out;
}

// Ranks present subtasks by (score desc, trajectory id asc, subtask asc) and
// prunes the first rho. Absent subtasks get beta = 0 outside the budget.
inline SubtaskMask build_mask(const std::vector<SubtaskScore>& scores, int rho, std::string method = {}) {
  if (rho < 0) throw ValidationError("rho must be nonnegative");
  std::vector<const SubtaskScore*> present;
  for (const auto& s : scores) {
    if (s.present) {
      if (!std::isfinite(s.mean_score) || s.mean_score < 0.0) {
        throw ValidationError("scores must be finite and nonnegative");
      }
      present.push_back(&s);
    }
  }
  if (static_cast<std::size_t>(rho) > present.size()) {
    throw ValidationError("rho=" + std::to_string(rho) + " exceeds the " + std::to_string(present.size()) +
                          " present subtasks");
  }
  std::sort(present.begin(), present.end(), [](const SubtaskScore* a, const SubtaskScore* b) {
    if (a->mean_score != b->mean_score) return a->mean_score > b->mean_score;
    return std::tie(a->trajectory_id, a->subtask_index) < std::tie(b->trajectory_id, b->subtask_index);
  });
  std::map<std::pair<std::string, int>, int> beta;
  for (std::size_t r = 0; r < present.size(); ++r) {
    beta[{present[r]->trajectory_id, present[r]->subtask_index}] = r < static_cast<std::size_t>(rho) ? 0 : 1;
  }
  SubtaskMask m;
  m.rho = rho;
  m.method = std::move(method);
  for (const auto& s : scores) {
    MaskEntry e{s.trajectory_id, s.subtask_index, s.present, s.present ? s.mean_score : 0.0, 0};
    if (s.present) e.beta = beta.at({s.trajectory_id, s.subtask_index});
    m.entries.push_back(std::move(e));
  }
  sort_mask_entries(m.entries);
  m.validate();
  return m;
}

// Mask that keeps every present subtask.
inline SubtaskMask uniform_mask(const std::vector<SubtaskSegmentation>& segs) {
  std::vector<SubtaskScore> scores;
  for (const auto& s : segs) {
    for (int j = 0; j < s.k_expected(); ++j) scores.push_back({s.trajectory_id(), j, s.present(j), 0.0});
  }
  return build_mask(scores, 0);
}

// ---------------------------------------------------------------------------
// CSV I/O. Absent subtasks are written with an empty mean_score.

inline std::string serialize_scores(const std::vector<SubtaskScore>& scores) {
  std::string out = "trajectory_id,subtask_index,mean_score\n";
  for (const auto& s : scores) {
    out += s.trajectory_id + ',' + std::to_string(s.subtask_index) + ',';
    if (s.present) out += csv::format_real(s.mean_score);
    out += '\n';
  }
  return out;
}

inline std::vector<SubtaskScore> load_scores(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "subtask_index", "mean_score"}, path);
  std::vector<SubtaskScore> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    SubtaskScore s;
    s.trajectory_id = row[t.column("trajectory_id")];
    s.subtask_index = static_cast<int>(csv::parse_int(row[t.column("subtask_index")], ln));
    const auto& v = row[t.column("mean_score")];
    s.present = !v.empty();
    if (s.present) s.mean_score = csv::parse_real(v, ln);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string serialize_traces(const std::vector<DeviationTrace>& traces) {
  std::string out = "trajectory_id,t,subtask_index,distance\n";
  for (const auto& tr : traces) {
    for (const auto& r : tr.records) {
      out += tr.trajectory_id + ',' + std::to_string(r.t) + ',' + std::to_string(r.subtask_index) + ',' +
             csv::format_real(r.distance) + '\n';
    }
  }
  return out;
}

inline std::vector<DeviationTrace> load_traces(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "t", "subtask_index", "distance"}, path);
  std::vector<DeviationTrace> out;
  std::map<std::string, std::size_t> where;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    const auto& id = row[t.column("trajectory_id")];
    auto it = where.find(id);
    if (it == where.end()) {
      it = where.emplace(id, out.size()).first;
      out.push_back({id, {}});
    }
    out[it->second].records.push_back({static_cast<int>(csv::parse_int(row[t.column("t")], ln)),
                                       static_cast<int>(csv::parse_int(row[t.column("subtask_index")], ln)),
                                       csv::parse_real(row[t.column("distance")], ln)});
  }
  return out;
}

}  // namespace gib
