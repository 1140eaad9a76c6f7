#pragma once

// Weighted behaviour cloning on top of the encoder architecture.
//
// Loss: (1/N) * sum_i sum_t u_it * 0.5 * |pi(s_it) - a_it|^2, where the
// per-step weight u_it is either the trajectory weight w_i or the subtask
// weight beta_ij of the segment containing t. Steps with zero weight are
// never evaluated, so data inside masked segments has no influence at all.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gib/csv.hpp"
#include "gib/dataset.hpp"
#include "gib/encoder.hpp"
#include "gib/error.hpp"

namespace gib {

// Per-step weights, one vector per trajectory.
using StepWeights = std::vector<Eigen::VectorXd>;

inline StepWeights step_weights_from_trajectory(const Dataset& d, const std::vector<double>& w) {
  if (w.size() != d.size()) {
    throw ValidationError("missing trajectory weight: got " + std::to_string(w.size()) + " weights for " +
                          std::to_string(d.size()) + " trajectories");
  }
  StepWeights out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) throw ValidationError("trajectory weights must be finite and >= 0");
    out.push_back(Eigen::VectorXd::Constant(d[i].length(), w[i]));
  }
  return out;
}

inline StepWeights step_weights_from_mask(const Dataset& d, const std::vector<SubtaskSegmentation>& segs,
                                          const SubtaskMask& mask) {
  if (segs.size() != d.size()) throw ValidationError("segmentations must cover every trajectory");
  std::map<std::pair<std::string, int>, int> beta;
  for (const auto& e : mask.entries) beta[{e.trajectory_id, e.subtask_index}] = e.beta;
  StepWeights out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = segs[i];
    if (s.trajectory_id() != d[i].id || s.length() != d[i].length()) {
      throw ValidationError("segmentation does not match trajectory '" + d[i].id + "'");
    }
    Eigen::VectorXd u(d[i].length());
    for (int j = 0; j < s.segment_count(); ++j) {
      const auto it = beta.find({d[i].id, j});
      if (it == beta.end()) {
        throw ValidationError("missing subtask weight for '" + d[i].id + "' subtask " + std::to_string(j));
      }
      const auto [b, e] = s.segment(j);
      u.segment(b, e - b).setConstant(static_cast<double>(it->second));
    }
    out.push_back(std::move(u));
  }
  return out;
}

// Evaluates the weighted loss and optionally its parameter gradient.
inline double bc_loss(const EncoderParams& p, const Dataset& d, const StepWeights& u,
                      Eigen::VectorXd* grad = nullptr) {
  if (u.size() != d.size()) throw ValidationError("missing weight: step weights must cover every trajectory");
  if (p.dims().s_dim != d.s_dim() || p.dims().a_dim != d.a_dim()) {
    throw ValidationError("policy dimensions do not match the dataset");
  }
  std::vector<std::pair<std::size_t, int>> active;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (u[i].size() != d[i].length()) throw ValidationError("missing weight for some steps of '" + d[i].id + "'");
    for (int t = 0; t < d[i].length(); ++t) {
      if (u[i](t) != 0.0) active.push_back({i, t});
    }
  }
  if (grad) grad->setZero(static_cast<Eigen::Index>(p.size()));
  if (active.empty()) return 0.0;

  const auto n = static_cast<Eigen::Index>(active.size());
  RowMatrix x(n, d.s_dim()), a(n, d.a_dim());
  Eigen::VectorXd wt(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto [i, t] = active[static_cast<std::size_t>(r)];
    x.row(r) = d[i].states.row(t);
    a.row(r) = d[i].actions.row(t);
    wt(r) = u[i](t);
  }
  const double inv_n = 1.0 / static_cast<double>(d.size());
  const ForwardCache fc = forward(p, x);
  const RowMatrix err = fc.a - a;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) loss += wt(r) * 0.5 * err.row(r).squaredNorm();
  loss *= inv_n;
  if (grad) {
    const RowMatrix d_a = (wt * inv_n).asDiagonal() * err;
    backward(p, fc, d_a, RowMatrix(), *grad);
  }
  return loss;
}

inline double bc_loss_weighted(const EncoderParams& p, const Dataset& d, const std::vector<double>& w,
                               Eigen::VectorXd* grad = nullptr) {
  return bc_loss(p, d, step_weights_from_trajectory(d, w), grad);
}

inline double bc_loss_weighted(const EncoderParams& p, const Dataset& d, const std::vector<SubtaskSegmentation>& segs,
                               const SubtaskMask& mask, Eigen::VectorXd* grad = nullptr) {
  return bc_loss(p, d, step_weights_from_mask(d, segs, mask), grad);
}

// ---------------------------------------------------------------------------
// Training

struct PolicyConfig {
  int hidden = 64;
  int latent = 32;
  int epochs = 300;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool standardize_inputs = true;
  bool standardize_targets = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden < 1 || latent < 1) throw ValidationError("policy widths must be positive");
    if (epochs < 1) throw ValidationError("policy epochs must be positive");
    if (batch_size < 1) throw ValidationError("policy batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("policy learning_rate must be positive");
    }
  }
};

struct PolicyLogRow {
  int epoch = 0;
  double loss = 0.0;  // training-set loss per unit weight, standardized targets
};

struct PolicyResult {
  EncoderParams params;
  std::vector<PolicyLogRow> log;
};

// Trains a fresh network with minibatch Adam on the active (nonzero-weight)
// steps. Each minibatch objective is the weighted squared error divided by
// the batch weight sum. Standardization statistics come from the active steps
// only, so masking a trajectory out is bitwise equivalent to deleting it.
inline PolicyResult train_policy(const Dataset& d, const StepWeights& u, const PolicyConfig& cfg) {
  cfg.validate();
  if (u.size() != d.size()) throw ValidationError("missing weight: step weights must cover every trajectory");
  struct Sample {
    std::size_t i;
    int t;
    double w;
  };
  std::vector<Sample> active;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (u[i].size() != d[i].length()) throw ValidationError("missing weight for some steps of '" + d[i].id + "'");
    for (int t = 0; t < d[i].length(); ++t) {
      const double w = u[i](t);
      if (!std::isfinite(w) || w < 0.0) throw ValidationError("policy weights must be finite and >= 0");
      if (w != 0.0) active.push_back({i, t, w});
    }
  }
  if (active.empty()) throw ValidationError("all training weights are zero; nothing to learn from");

  const auto n = static_cast<Eigen::Index>(active.size());
  const int s_dim = d.s_dim(), a_dim = d.a_dim();
  RowMatrix x(n, s_dim), y(n, a_dim);
  Eigen::VectorXd wt(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = active[static_cast<std::size_t>(r)];
    x.row(r) = d[s.i].states.row(s.t);
    y.row(r) = d[s.i].actions.row(s.t);
    wt(r) = s.w;
  }

  auto moments = [n](const RowMatrix& m) {
    Eigen::VectorXd mean = m.colwise().mean().transpose();
    Eigen::VectorXd sd = ((m.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(n))
                             .sqrt()
                             .transpose();
    for (Eigen::Index c = 0; c < sd.size(); ++c) {
      if (!(sd(c) > 1e-8)) {
        sd(c) = 1.0;
        mean(c) = 0.0;
      }
    }
    return std::pair{mean, sd};
  };

  // Targets are trained in standardized units and the scaling is folded into
  // the output layer afterwards.
  Eigen::VectorXd y_mean = Eigen::VectorXd::Zero(a_dim), y_sd = Eigen::VectorXd::Ones(a_dim);
  if (cfg.standardize_targets) std::tie(y_mean, y_sd) = moments(y);
  const RowMatrix yn = (y.rowwise() - y_mean.transpose()).array().rowwise() / y_sd.transpose().array();

  EncoderParams p = EncoderParams::glorot({s_dim, cfg.hidden, cfg.latent, a_dim}, cfg.seed);
  if (cfg.standardize_inputs) {
    const auto [mean, sd] = moments(x);
    p.fold_input_standardization(mean, sd);
  }

  const auto np = static_cast<Eigen::Index>(p.size());
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(np), m2 = Eigen::VectorXd::Zero(np), g(np);
  std::mt19937_64 rng(cfg.seed ^ 0xA0761D6478BD642Full);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);
  long long step = 0;

  PolicyResult result;
  RowMatrix xb, yb;
  Eigen::VectorXd wb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += bs) {
      const Eigen::Index m = std::min(bs, n - start);
      xb.resize(m, s_dim);
      yb.resize(m, a_dim);
      wb.resize(m);
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto src = order[static_cast<std::size_t>(start + r)];
        xb.row(r) = x.row(src);
        yb.row(r) = yn.row(src);
        wb(r) = wt(src);
      }
      const ForwardCache fc = forward(p, xb);
      const RowMatrix d_a = (wb / wb.sum()).asDiagonal() * (fc.a - yb);
      g.setZero();
      backward(p, fc, d_a, RowMatrix(), g);
      if (!g.allFinite()) {
        throw NumericError("policy training diverged at epoch " + std::to_string(epoch) + ": non-finite gradient");
      }
      ++step;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      p.mutable_values().array() -=
          cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
    }
    const RowMatrix err = forward(p, x).a - yn;
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) loss += wt(r) * 0.5 * err.row(r).squaredNorm();
    loss /= wt.sum();
    if (!std::isfinite(loss)) throw NumericError("policy training diverged at epoch " + std::to_string(epoch));
    result.log.push_back({epoch, loss});
  }

  if (cfg.standardize_targets) {
    const auto off6 = p.offset(6), off7 = p.offset(7);
    const int h = cfg.hidden;
    for (int r = 0; r < a_dim; ++r) {
      for (int c = 0; c < h; ++c) p.data()[off6 + static_cast<std::size_t>(r * h + c)] *= y_sd(r);
      p.data()[off7 + static_cast<std::size_t>(r)] = p.data()[off7 + static_cast<std::size_t>(r)] * y_sd(r) + y_mean(r);
    }
  }
  result.params = std::move(p);
  return result;
}

inline PolicyResult train_policy(const Dataset& d, const std::vector<SubtaskSegmentation>& segs,
                                 const SubtaskMask& mask, const PolicyConfig& cfg) {
  mask.validate();
  return train_policy(d, step_weights_from_mask(d, segs, mask), cfg);
}

inline std::string serialize_policy_log(const std::vector<PolicyLogRow>& log) {
  std::string out = "epoch,loss\n";
  for (const auto& r : log) out += std::to_string(r.epoch) + ',' + csv::format_real(r.loss) + '\n';
  return out;
}

// Evaluation report rows: method,sub1,sub2,sub3,full,seed (sub3 empty for
// two-subtask scenarios).
struct EvalRow {
  std::string method;
  std::vector<double> subtask_success;
  double full = 0.0;
  std::uint64_t seed = 0;
};

inline std::string serialize_eval_rows(const std::vector<EvalRow>& rows) {
  std::string out = "method,sub1,sub2,sub3,full,seed\n";
  for (const auto& r : rows) {
    out += r.method;
    for (std::size_t j = 0; j < 3; ++j) {
      out += ',';
      if (j < r.subtask_success.size()) out += csv::format_real(r.subtask_success[j]);
    }
    out += ',' + csv::format_real(r.full) + ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

inline std::vector<EvalRow> load_eval_rows(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"method", "sub1", "sub2", "sub3", "full", "seed"}, path);
  std::vector<EvalRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    EvalRow e;
    e.method = row[static_cast<std::size_t>(t.column("method"))];
    for (const char* c : {"sub1", "sub2", "sub3"}) {
      const auto& f = row[static_cast<std::size_t>(t.column(c))];
      if (!f.empty()) e.subtask_success.push_back(csv::parse_real(f, ln));
    }
    e.full = csv::parse_real(row[static_cast<std::size_t>(t.column("full"))], ln);
    e.seed = static_cast<std::uint64_t>(csv::parse_int(row[static_cast<std::size_t>(t.column("seed"))], ln));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace gib
