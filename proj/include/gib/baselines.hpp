#pragma once

// Classical outlier detectors applied to per-segment mean latents, used as
// masking baselines next to the Mahalanobis scores.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/error.hpp"
#include "gib/scoring.hpp"

namespace gib {

struct SegmentFeature {
  std::string trajectory_id;
  int subtask_index = 0;
  Eigen::VectorXd mean_latent;
};

inline std::vector<SegmentFeature> segment_features(const std::vector<RowMatrix>& latents,
                                                    const std::vector<SubtaskSegmentation>& segs) {
  if (latents.size() != segs.size()) throw ValidationError("latents and segmentations must align");
  std::vector<SegmentFeature> out;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    if (latents[i].rows() != s.length()) {
      throw ValidationError("latent length does not match segmentation for '" + s.trajectory_id() + "'");
    }
    for (int j = 0; j < s.segment_count(); ++j) {
      const auto [b, e] = s.segment(j);
      if (e <= b) throw ValidationError("empty segment in '" + s.trajectory_id() + "'");
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(latents[i].cols());
      for (int t = b; t < e; ++t) sum += latents[i].row(t).transpose();
      out.push_back({s.trajectory_id(), j, sum / static_cast<double>(e - b)});
    }
  }
  return out;
}

inline double euclidean(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    s += d * d;
  }
  return std::sqrt(s);
}

// Perturbs every point that exactly repeats an earlier one by Gaussian noise
// of scale 1e-12 so that local densities stay finite.
inline std::vector<Eigen::VectorXd> jitter_duplicates(std::vector<Eigen::VectorXd> points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1e-12);
  for (std::size_t i = 1; i < points.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (points[i] == points[j]) {
        for (Eigen::Index c = 0; c < points[i].size(); ++c) points[i](c) += noise(rng);
        j = static_cast<std::size_t>(-1);  // re-check against all earlier points
      }
    }
  }
  return points;
}

namespace detail {

inline void check_neighbors(std::size_t n, int k) {
  if (k < 1) throw ValidationError("k_neighbors must be positive");
  if (static_cast<std::size_t>(k) >= n) {
    throw ValidationError("k_neighbors=" + std::to_string(k) + " requires more than " + std::to_string(k) +
                          " points, got " + std::to_string(n));
  }
}

inline std::vector<std::vector<double>> distance_matrix(const std::vector<Eigen::VectorXd>& pts) {
  const auto n = pts.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = euclidean(pts[i], pts[j]);
  }
  return d;
}

// Distance from p to its k-th nearest other point.
inline double kth_distance(const std::vector<double>& row, std::size_t p, int k) {
  std::vector<double> others;
  others.reserve(row.size() - 1);
  for (std::size_t o = 0; o < row.size(); ++o) {
    if (o != p) others.push_back(row[o]);
  }
  std::nth_element(others.begin(), others.begin() + (k - 1), others.end());
  return others[static_cast<std::size_t>(k - 1)];
}

}  // namespace detail

// Distance to the k-th nearest neighbour (self excluded).
inline std::vector<double> knn_outlier_scores(const std::vector<Eigen::VectorXd>& points, int k_neighbors) {
  detail::check_neighbors(points.size(), k_neighbors);
  const auto d = detail::distance_matrix(points);
  std::vector<double> out(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) out[p] = detail::kth_distance(d[p], p, k_neighbors);
  return out;
}

// Local outlier factor. The k-distance neighbourhood includes ties; neighbour
// sums run in ascending point index.
inline std::vector<double> lof_scores(const std::vector<Eigen::VectorXd>& input, int k_neighbors,
                                      std::uint64_t seed = 0) {
  detail::check_neighbors(input.size(), k_neighbors);
  const auto points = jitter_duplicates(input, seed);
  const auto n = points.size();
  const auto d = detail::distance_matrix(points);

  std::vector<double> kdist(n);
  std::vector<std::vector<std::size_t>> hood(n);
  for (std::size_t p = 0; p < n; ++p) {
    kdist[p] = detail::kth_distance(d[p], p, k_neighbors);
    for (std::size_t o = 0; o < n; ++o) {
      if (o != p && d[p][o] <= kdist[p]) hood[p].push_back(o);
    }
  }
  std::vector<double> lrd(n);
  for (std::size_t p = 0; p < n; ++p) {
    double reach = 0.0;
    for (auto o : hood[p]) reach += std::max(kdist[o], d[p][o]);
    lrd[p] = 1.0 / (reach / static_cast<double>(hood[p].size()));
  }
  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (auto o : hood[p]) s += lrd[o];
    out[p] = s / static_cast<double>(hood[p].size()) / lrd[p];
  }
  return out;
}

enum class BaselineMethod { kLof, kKnn };

// Scores each present segment with the chosen detector and prunes the top rho
// with the same ranking rule as the Mahalanobis mask. Absent subtasks (per
// segmentation) are carried as absent entries.
inline SubtaskMask baseline_mask(const std::vector<SegmentFeature>& features, const std::vector<SubtaskScore>& layout,
                                 BaselineMethod method, int k_neighbors, int rho, std::uint64_t seed = 0) {
  std::vector<Eigen::VectorXd> pts;
  for (const auto& f : features) pts.push_back(f.mean_latent);
  const auto s = method == BaselineMethod::kLof ? lof_scores(pts, k_neighbors, seed) : knn_outlier_scores(pts, k_neighbors);
  std::vector<SubtaskScore> scores;
  for (std::size_t i = 0; i < features.size(); ++i) {
    scores.push_back({features[i].trajectory_id, features[i].subtask_index, true, s[i]});
  }
  for (const auto& l : layout) {
    if (!l.present) scores.push_back({l.trajectory_id, l.subtask_index, false, 0.0});
  }
  return build_mask(scores, rho, method == BaselineMethod::kLof ? "lof" : "knn");
}

// Absent-subtask layout implied by segmentations.
inline std::vector<SubtaskScore> absent_layout(const std::vector<SubtaskSegmentation>& segs) {
  std::vector<SubtaskScore> out;
  for (const auto& s : segs) {
    for (int j = s.segment_count(); j < s.k_expected(); ++j) out.push_back({s.trajectory_id(), j, false, 0.0});
  }
  return out;
}

// Feature CSV: trajectory_id,subtask_index,f0,...,f{d-1}. Absent subtasks
// are written with empty feature fields.
inline std::string serialize_features(const std::vector<SegmentFeature>& feats,
                                      const std::vector<SubtaskScore>& absent = {}) {
  const auto d = feats.empty() ? 0 : feats.front().mean_latent.size();
  std::string out = "trajectory_id,subtask_index";
  for (Eigen::Index c = 0; c < d; ++c) out += ",f" + std::to_string(c);
  out += '\n';
  for (const auto& f : feats) {
    out += f.trajectory_id + ',' + std::to_string(f.subtask_index);
    for (Eigen::Index c = 0; c < d; ++c) out += ',' + csv::format_real(f.mean_latent(c));
    out += '\n';
  }
  for (const auto& a : absent) {
    out += a.trajectory_id + ',' + std::to_string(a.subtask_index);
    for (Eigen::Index c = 0; c < d; ++c) out += ',';
    out += '\n';
  }
  return out;
}

struct FeatureTable {
  std::vector<SegmentFeature> features;
  std::vector<SubtaskScore> absent;
};

inline FeatureTable load_features(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "subtask_index"}, path);
  const auto d = static_cast<Eigen::Index>(t.header.size()) - 2;
  if (d < 1) throw ParseError("feature file has no feature columns", 1);
  FeatureTable out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    const std::string id = row[0];
    const int j = static_cast<int>(csv::parse_int(row[1], ln));
    if (row[2].empty()) {
      out.absent.push_back({id, j, false, 0.0});
      continue;
    }
    Eigen::VectorXd v(d);
    for (Eigen::Index c = 0; c < d; ++c) v(c) = csv::parse_real(row[static_cast<std::size_t>(c + 2)], ln);
    out.features.push_back({id, j, std::move(v)});
  }
  return out;
}

}  // namespace gib
