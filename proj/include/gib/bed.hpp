#pragma once

// Stage 1: self-supervised trajectory weighting.
//
// Jointly learns encoder parameters and a weight w_i in [0,1] per trajectory
// by minimizing
//
//   c * (1/N) * sum_i w_i * mean_t |pi(s_t) - a_t|^2          (action)
//   + h * sum_i w_i * |G - g_i|                                (goal)
//   + q * sum_i w_i * |Z - resample(z_i)|_F / L                (path)
//   + lambda_count * (m*N - sum_i w_i)^2                       (count)
//
// where g_i is the terminal latent of trajectory i, G and Z are the
// weight-normalized means of terminal latents and resampled latent paths.
// G and Z are held constant inside a gradient step.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/encoder.hpp"
#include "gib/error.hpp"

namespace gib {

struct BedConfig {
  double c = 1.0;
  double h_coef = 0.1;
  double q = 0.1;
  double lambda_count = 1.0;
  double m = 0.75;
  int epochs = 500;
  double step_size = 1e-3;
  double weight_step_size = 0.03;  // 0: same as step_size
  double momentum = 0.9;
  int resample_len = 100;
  std::uint64_t seed = 0;
  int hidden = 32;
  int latent = 8;
  bool standardize_inputs = true;

  double weight_step() const { return weight_step_size > 0.0 ? weight_step_size : step_size; }

  void validate() const {
    if (c < 0 || h_coef < 0 || q < 0 || lambda_count < 0) {
      throw ValidationError("loss coefficients must be nonnegative");
    }
    if (!(m > 0.0 && m <= 1.0)) throw ValidationError("m must lie in (0, 1]");
    if (epochs < 1) throw ValidationError("epochs must be positive");
    if (!(step_size > 0.0)) throw ValidationError("step_size must be positive");
    if (!(weight_step_size >= 0.0)) throw ValidationError("weight_step_size must be nonnegative");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
    if (resample_len < 2) throw ValidationError("resample_len must be at least 2");
    if (hidden < 1 || latent < 1) throw ValidationError("network widths must be positive");
  }
};

struct TrajectoryWeights {
  std::vector<std::string> ids;
  std::vector<double> raw;
  std::vector<int> binary;

  // Strict threshold: a raw weight of exactly 0.5 binarizes to 0.
  static TrajectoryWeights from_raw(std::vector<std::string> ids, std::vector<double> raw) {
    TrajectoryWeights w;
    w.ids = std::move(ids);
    w.raw = std::move(raw);
    for (double& r : w.raw) r = std::clamp(r, 0.0, 1.0);
    for (double r : w.raw) w.binary.push_back(r > 0.5 ? 1 : 0);
    return w;
  }

  int binary_for(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return binary[i];
    }
    throw ValidationError("no weight for trajectory '" + id + "'");
  }
};

// ---------------------------------------------------------------------------
// Resampling

// Linear-interpolation stencil of one resampled row: row = (1-alpha)*z[k] + alpha*z[k+1].
struct ResampleStencil {
  std::vector<int> k;
  std::vector<double> alpha;
};

inline ResampleStencil resample_stencil(int length, int L) {
  if (L < 2) throw ValidationError("resample length must be at least 2");
  if (length < 2) throw ValidationError("latent trajectory must have at least 2 steps");
  ResampleStencil s;
  s.k.resize(static_cast<std::size_t>(L));
  s.alpha.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const double pos = static_cast<double>(static_cast<long long>(l) * (length - 1)) / static_cast<double>(L - 1);
    int k = static_cast<int>(std::floor(pos));
    if (k >= length - 1) k = length - 2;
    double alpha = pos - k;
    if (l == L - 1) {
      k = length - 2;
      alpha = 1.0;
    }
    s.k[static_cast<std::size_t>(l)] = k;
    s.alpha[static_cast<std::size_t>(l)] = alpha;
  }
  return s;
}

// Samples z at L uniformly spaced normalized times in [0,1].
inline RowMatrix resample_latent(const RowMatrix& z, int L) {
  const auto s = resample_stencil(static_cast<int>(z.rows()), L);
  RowMatrix out(L, z.cols());
  for (int l = 0; l < L; ++l) {
    const int k = s.k[static_cast<std::size_t>(l)];
    const double a = s.alpha[static_cast<std::size_t>(l)];
    if (a == 0.0) {
      out.row(l) = z.row(k);
    } else if (a == 1.0) {
      out.row(l) = z.row(k + 1);
    } else {
      out.row(l) = (1.0 - a) * z.row(k) + a * z.row(k + 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

struct NominalStats {
  Eigen::VectorXd goal;  // G, length d
  RowMatrix path;        // Z, L x d
};

struct BedLoss {
  double total = 0.0;
  // Coefficient-scaled contributions; they sum to `total`.
  double action = 0.0;
  double goal = 0.0;
  double path = 0.0;
  double count = 0.0;
  // Unscaled per-trajectory inconsistencies: mean squared action error,
  // goal distance, path distance / L.
  std::vector<double> action_error;
  std::vector<double> goal_distance;
  std::vector<double> path_distance;
};

// Precomputed per-dataset quantities reused across epochs.
class BedProblem {
 public:
  BedProblem(const Dataset& data, const BedConfig& cfg) : data_(&data), cfg_(cfg) {
    cfg_.validate();
    x_ = stack_states(data);
    for (const auto& t : data.trajectories()) {
      offsets_.push_back(rows_);
      rows_ += t.length();
      stencils_.push_back(resample_stencil(t.length(), cfg_.resample_len));
    }
    a_ = RowMatrix(rows_, data.a_dim());
    for (std::size_t i = 0; i < data.size(); ++i) a_.middleRows(offsets_[i], data[i].length()) = data[i].actions;
  }

  const BedConfig& config() const { return cfg_; }
  const Dataset& data() const { return *data_; }
  std::size_t size() const { return data_->size(); }

  NominalStats nominal(const EncoderParams& p, const Eigen::VectorXd& w) const {
    return nominal_from_latents(encode_batch(p, x_), w);
  }

  // Evaluates the loss. When `nominal` is null, G and Z are computed from the
  // current params and weights. Gradients (w.r.t. params, then weights) are
  // written into the optional outputs.
  BedLoss evaluate(const EncoderParams& p, const Eigen::VectorXd& w, const NominalStats* nominal,
                   Eigen::VectorXd* grad_params, Eigen::VectorXd* grad_w) const {
    const auto n = size();
    if (static_cast<std::size_t>(w.size()) != n) throw ValidationError("weight vector length must equal N");
    const ForwardCache fc = forward(p, x_);
    std::optional<NominalStats> own;
    if (!nominal) {
      own = nominal_from_latents(fc.z, w);
      nominal = &*own;
    }
    const int L = cfg_.resample_len;
    const double N = static_cast<double>(n);

    BedLoss out;
    out.action_error.resize(n);
    out.goal_distance.resize(n);
    out.path_distance.resize(n);

    const bool want_grad = grad_params != nullptr;
    RowMatrix d_a, d_z;
    if (want_grad) {
      d_a = RowMatrix::Zero(rows_, data_->a_dim());
      d_z = RowMatrix::Zero(rows_, p.dims().latent);
    }

    double sum_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto off = offsets_[i];
      const Eigen::Index T = (*data_)[i].length();
      const double wi = w(static_cast<Eigen::Index>(i));
      sum_w += wi;

      const RowMatrix err = fc.a.middleRows(off, T) - a_.middleRows(off, T);
      const double ae = err.squaredNorm() / static_cast<double>(T);
      out.action_error[i] = ae;

      const Eigen::VectorXd gi = fc.z.row(off + T - 1).transpose();
      const Eigen::VectorXd gdiff = gi - nominal->goal;
      const double gd = gdiff.norm();
      out.goal_distance[i] = gd;

      const RowMatrix zi = fc.z.middleRows(off, T);
      const RowMatrix ri = resample_latent(zi, L);
      const RowMatrix pdiff = ri - nominal->path;
      const double pn = pdiff.norm();
      out.path_distance[i] = pn / L;

      if (wi != 0.0) {
        out.action += cfg_.c * wi * ae / N;
        out.goal += cfg_.h_coef * wi * gd;
        out.path += cfg_.q * wi * pn / L;
      }

      if (want_grad && wi != 0.0) {
        d_a.middleRows(off, T) = (2.0 * cfg_.c * wi / (N * static_cast<double>(T))) * err;
        if (gd > 0.0) d_z.row(off + T - 1) += (cfg_.h_coef * wi / gd) * gdiff.transpose();
        if (pn > 0.0) {
          const double scale = cfg_.q * wi / (pn * L);
          const auto& st = stencils_[i];
          for (int l = 0; l < L; ++l) {
            const int k = st.k[static_cast<std::size_t>(l)];
            const double a = st.alpha[static_cast<std::size_t>(l)];
            d_z.row(off + k) += (scale * (1.0 - a)) * pdiff.row(l);
            d_z.row(off + k + 1) += (scale * a) * pdiff.row(l);
          }
        }
      }
    }
    const double gap = cfg_.m * N - sum_w;
    out.count = cfg_.lambda_count * gap * gap;
    out.total = out.action + out.goal + out.path + out.count;

    if (want_grad) {
      grad_params->setZero(static_cast<Eigen::Index>(p.size()));
      backward(p, fc, d_a, d_z, *grad_params);
    }
    if (grad_w) {
      grad_w->resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        (*grad_w)(static_cast<Eigen::Index>(i)) = cfg_.c * out.action_error[i] / N +
                                                  cfg_.h_coef * out.goal_distance[i] +
                                                  cfg_.q * out.path_distance[i] -
                                                  2.0 * cfg_.lambda_count * gap;
      }
    }
    return out;
  }

  NominalStats nominal_from_latents(const RowMatrix& z, const Eigen::VectorXd& w) const {
    const int L = cfg_.resample_len;
    const double sum_w = w.sum();
    if (!(sum_w > 0.0)) {
      throw NumericError("sum of trajectory weights is zero; nominal goal and path are undefined "
                         "(re-initialize the weights)");
    }
    NominalStats s;
    s.goal = Eigen::VectorXd::Zero(z.cols());
    s.path = RowMatrix::Zero(L, z.cols());
    for (std::size_t i = 0; i < size(); ++i) {
      const double wi = w(static_cast<Eigen::Index>(i));
      if (wi == 0.0) continue;
      const auto off = offsets_[i];
      const Eigen::Index T = (*data_)[i].length();
      s.goal += wi * z.row(off + T - 1).transpose();
      s.path += wi * resample_latent(z.middleRows(off, T), L);
    }
    s.goal /= sum_w;
    s.path /= sum_w;
    return s;
  }

  // Latent trajectories for every trajectory in dataset order.
  std::vector<RowMatrix> latents(const EncoderParams& p) const {
    const RowMatrix z = encode_batch(p, x_);
    std::vector<RowMatrix> out;
    for (std::size_t i = 0; i < size(); ++i) out.emplace_back(z.middleRows(offsets_[i], (*data_)[i].length()));
    return out;
  }

 private:
  const Dataset* data_;
  BedConfig cfg_;
  RowMatrix x_;
  RowMatrix a_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index rows_ = 0;
  std::vector<ResampleStencil> stencils_;
};

inline BedLoss compute_bed_loss(const EncoderParams& p, const Eigen::VectorXd& w, const Dataset& data,
                                const BedConfig& cfg) {
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w(i) >= 0.0 && w(i) <= 1.0)) throw ValidationError("weights must lie in [0, 1]");
  }
  return BedProblem(data, cfg).evaluate(p, w, nullptr, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Training

struct BedLogRow {
  int epoch = 0;
  double total = 0, action = 0, goal = 0, path = 0, count = 0;
};

struct BedResult {
  EncoderParams params;
  TrajectoryWeights weights;
  std::vector<BedLogRow> log;
};

inline EncoderParams initial_params(const Dataset& data, int hidden, int latent, bool standardize,
                                    std::uint64_t seed) {
  auto p = EncoderParams::glorot({data.s_dim(), hidden, latent, data.a_dim()}, seed);
  if (standardize) {
    const auto [mean, scale] = state_moments(data);
    p.fold_input_standardization(mean, scale);
  }
  return p;
}

inline BedResult train_bed(const Dataset& data, const BedConfig& cfg) {
  cfg.validate();
  if (data.size() < 2) throw ValidationError("weight learning needs at least 2 trajectories");
  const BedProblem problem(data, cfg);
  EncoderParams params = initial_params(data, cfg.hidden, cfg.latent, cfg.standardize_inputs, cfg.seed);
  const auto np = static_cast<Eigen::Index>(params.size());
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, cfg.m);
  Eigen::VectorXd vel_p = Eigen::VectorXd::Zero(np), vel_w = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g_p, g_w;

  BedResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const NominalStats nominal = problem.nominal(params, w);
    const BedLoss loss = problem.evaluate(params, w, &nominal, &g_p, &g_w);
    for (auto [name, v] : {std::pair{"action", loss.action}, {"goal", loss.goal}, {"path", loss.path},
                           {"count", loss.count}}) {
      if (!std::isfinite(v)) {
        throw NumericError("weight learning diverged at epoch " + std::to_string(epoch) + ": " + name +
                           " term is not finite");
      }
    }
    result.log.push_back({epoch, loss.total, loss.action, loss.goal, loss.path, loss.count});
    if (!g_p.allFinite() || !g_w.allFinite()) {
      throw NumericError("weight learning diverged at epoch " + std::to_string(epoch) + ": non-finite gradient");
    }
    vel_p = cfg.momentum * vel_p - cfg.step_size * g_p;
    vel_w = cfg.momentum * vel_w - cfg.weight_step() * g_w;
    params.mutable_values() += vel_p;
    w += vel_w;
    w = w.cwiseMax(0.0).cwiseMin(1.0);
  }

  std::vector<std::string> ids;
  for (const auto& t : data.trajectories()) ids.push_back(t.id);
  result.weights = TrajectoryWeights::from_raw(std::move(ids), std::vector<double>(w.data(), w.data() + n));
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// CSV I/O

inline std::string serialize_weights(const TrajectoryWeights& w) {
  std::string out = "trajectory_id,raw_weight,binary\n";
  for (std::size_t i = 0; i < w.ids.size(); ++i) {
    out += w.ids[i] + ',' + csv::format_real(w.raw[i]) + ',' + std::to_string(w.binary[i]) + '\n';
  }
  return out;
}

inline void save_weights(const TrajectoryWeights& w, const std::string& path) {
  csv::write_file(path, serialize_weights(w));
}

inline TrajectoryWeights load_weights(const std::string& path) {
  const auto t = csv::read_table(path);
  csv::require_columns(t, {"trajectory_id", "raw_weight", "binary"}, path);
  TrajectoryWeights w;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto ln = t.line_numbers[r];
    w.ids.push_back(row[t.column("trajectory_id")]);
    const double raw = csv::parse_real(row[t.column("raw_weight")], ln);
    if (!(raw >= 0.0 && raw <= 1.0)) throw ParseError("raw weight outside [0, 1]", ln);
    w.raw.push_back(raw);
    const auto b = csv::parse_int(row[t.column("binary")], ln);
    if (b != 0 && b != 1) throw ParseError("binary weight must be 0 or 1", ln);
    w.binary.push_back(static_cast<int>(b));
  }
  return w;
}

inline std::string serialize_bed_log(const std::vector<BedLogRow>& log) {
  std::string out = "epoch,total,action,goal,path,count\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + ',' + csv::format_real(r.total) + ',' + csv::format_real(r.action) + ',' +
           csv::format_real(r.goal) + ',' + csv::format_real(r.path) + ',' + csv::format_real(r.count) + '\n';
  }
  return out;
}

}  // namespace gib
