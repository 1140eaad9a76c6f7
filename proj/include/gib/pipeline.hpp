#pragma once

// Glue for running the two curation stages and the downstream comparison
// end to end. Used by the CLI and the acceptance suite.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gib/baselines.hpp"
#include "gib/bed.hpp"
#include "gib/dataset.hpp"
#include "gib/encoder.hpp"
#include "gib/policy.hpp"
#include "gib/scoring.hpp"
#include "gib/segmentation.hpp"
#include "gib/synthgym.hpp"

namespace gib {

// Latent trajectory of every trajectory, in dataset order.
inline std::vector<RowMatrix> encode_dataset(const EncoderParams& p, const Dataset& d) {
  std::vector<RowMatrix> out;
  out.reserve(d.size());
  for (const auto& t : d.trajectories()) out.push_back(encode_batch(p, t.states));
  return out;
}

// Binary weights aligned with the dataset order.
inline std::vector<int> aligned_binary(const TrajectoryWeights& w, const Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& t : d.trajectories()) out.push_back(w.binary_for(t.id));
  return out;
}

struct SubtaskAnalysis {
  std::vector<RowMatrix> latents;
  std::map<int, SubtaskGaussian> gaussians;
  ScoreResult scores;
  std::vector<SegmentFeature> features;
};

inline SubtaskAnalysis analyze_subtasks(const EncoderParams& encoder, const TrajectoryWeights& weights,
                                        const Dataset& d, const std::vector<SubtaskSegmentation>& segs,
                                        const GaussianFitOptions& opt = {}) {
  SubtaskAnalysis a;
  a.latents = encode_dataset(encoder, d);
  a.gaussians = fit_all_subtasks(a.latents, segs, aligned_binary(weights, d), opt);
  a.scores = score_subtasks(a.latents, segs, a.gaussians);
  a.features = segment_features(a.latents, segs);
  return a;
}

inline synth::Policy as_policy(const EncoderParams& p) {
  return [p](const Eigen::VectorXd& s) { return predict_action(p, s); };
}

// Trains a policy on the masked data and rolls it out.
inline synth::EvalResult train_and_evaluate(const Dataset& d, const std::vector<SubtaskSegmentation>& segs,
                                            const SubtaskMask& mask, const PolicyConfig& cfg,
                                            synth::Scenario scenario, int rollouts, std::uint64_t eval_seed) {
  const auto trained = train_policy(d, segs, mask, cfg);
  return synth::evaluate_policy(as_policy(trained.params), scenario, rollouts, synth::default_horizon(scenario),
                                eval_seed);
}

// Subtask-level precision and recall of the pruned set against truth.
struct Detection {
  int true_positive = 0;
  int false_positive = 0;
  int false_negative = 0;
  double precision() const {
    return true_positive + false_positive == 0 ? 1.0
                                               : static_cast<double>(true_positive) / (true_positive + false_positive);
  }
  double recall() const {
    return true_positive + false_negative == 0 ? 1.0
                                               : static_cast<double>(true_positive) / (true_positive + false_negative);
  }
};

// `bad` maps trajectory id to its corrupted subtask indices.
inline Detection detection_against_truth(const SubtaskMask& mask, const std::map<std::string, std::vector<int>>& bad) {
  Detection d;
  for (const auto& e : mask.entries) {
    const auto it = bad.find(e.trajectory_id);
    const bool is_bad = it != bad.end() && std::find(it->second.begin(), it->second.end(), e.subtask_index) !=
                                               it->second.end();
    const bool pruned = e.present && e.beta == 0;
    d.true_positive += is_bad && pruned;
    d.false_positive += !is_bad && pruned;
    d.false_negative += is_bad && !pruned;
  }
  return d;
}

inline std::map<std::string, std::vector<int>> bad_subtasks(const LabeledDataset& d) {
  std::map<std::string, std::vector<int>> out;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const auto& l = d.truth.at(i);
    if (!l) continue;
    for (std::size_t j = 0; j < l->subtasks_good.size(); ++j) {
      if (!l->subtasks_good[j]) out[d.data[i].id].push_back(static_cast<int>(j));
    }
  }
  return out;
}

// Ordinary least-squares slope of y against x.
inline double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("slope needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw ValidationError("slope is undefined for constant x");
  return sxy / sxx;
}

}  // namespace gib
