#pragma once

// Feedforward latent encoder and action head:
//
//   state --W1,b1,tanh--> hidden --W2,b2,tanh--> latent z
//   z     --W3,b3,tanh--> hidden --W4,b4-------> action
//
// All parameters live in one flat vector (row-major weights, each followed
// by its bias) so that optimizers and the finite-difference checker can treat
// them uniformly. Gradients are computed by explicit reverse accumulation.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/error.hpp"

namespace gib {

struct EncoderDims {
  int s_dim = 0;
  int hidden = 32;
  int latent = 8;
  int a_dim = 0;

  bool operator==(const EncoderDims&) const = default;

  std::size_t parameter_count() const {
    const auto s = static_cast<std::size_t>(s_dim), h = static_cast<std::size_t>(hidden),
               d = static_cast<std::size_t>(latent), a = static_cast<std::size_t>(a_dim);
    return h * s + h + d * h + d + h * d + h + a * h + a;
  }
};

class EncoderParams {
 public:
  using ConstMap = Eigen::Map<const RowMatrix>;
  using Map = Eigen::Map<RowMatrix>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  EncoderParams() = default;
  EncoderParams(EncoderDims dims, Eigen::VectorXd values) : dims_(dims), values_(std::move(values)) {
    if (dims_.s_dim <= 0 || dims_.hidden <= 0 || dims_.latent <= 0 || dims_.a_dim <= 0) {
      throw ValidationError("encoder dimensions must be positive");
    }
    if (static_cast<std::size_t>(values_.size()) != dims_.parameter_count()) {
      throw ValidationError("encoder parameter vector has wrong length");
    }
    if (!values_.allFinite()) throw NumericError("encoder parameters must be finite");
  }

  explicit EncoderParams(EncoderDims dims)
      : EncoderParams(dims, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims.parameter_count()))) {}

  // Glorot-uniform weights, zero biases.
  static EncoderParams glorot(EncoderDims dims, std::uint64_t seed) {
    EncoderParams p(dims);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](double* w, int rows, int cols) {
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-a, a);
      for (int i = 0; i < rows * cols; ++i) w[i] = u(rng);
    };
    const auto& d = dims;
    fill(p.data() + p.offset(0), d.hidden, d.s_dim);
    fill(p.data() + p.offset(2), d.latent, d.hidden);
    fill(p.data() + p.offset(4), d.hidden, d.latent);
    fill(p.data() + p.offset(6), d.a_dim, d.hidden);
    return p;
  }

  const EncoderDims& dims() const { return dims_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& mutable_values() { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  // Blocks: 0 W1, 1 b1, 2 W2, 3 b2, 4 W3, 5 b3, 6 W4, 7 b4.
  std::size_t offset(int block) const { return offsets()[static_cast<std::size_t>(block)]; }

  ConstMap W1() const { return {data() + offset(0), dims_.hidden, dims_.s_dim}; }
  ConstVecMap b1() const { return {data() + offset(1), dims_.hidden}; }
  ConstMap W2() const { return {data() + offset(2), dims_.latent, dims_.hidden}; }
  ConstVecMap b2() const { return {data() + offset(3), dims_.latent}; }
  ConstMap W3() const { return {data() + offset(4), dims_.hidden, dims_.latent}; }
  ConstVecMap b3() const { return {data() + offset(5), dims_.hidden}; }
  ConstMap W4() const { return {data() + offset(6), dims_.a_dim, dims_.hidden}; }
  ConstVecMap b4() const { return {data() + offset(7), dims_.a_dim}; }

  Map W1() { return {data() + offset(0), dims_.hidden, dims_.s_dim}; }
  Eigen::Map<Eigen::VectorXd> b1() { return {data() + offset(1), dims_.hidden}; }

  // Rewrites the first layer so the network sees (x - mean) / scale instead
  // of x. Zero scales are treated as 1.
  void fold_input_standardization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
    if (mean.size() != dims_.s_dim || scale.size() != dims_.s_dim) {
      throw ValidationError("standardization vectors must have length s_dim");
    }
    Eigen::VectorXd inv(dims_.s_dim);
    for (int i = 0; i < dims_.s_dim; ++i) inv(i) = scale(i) > 1e-12 ? 1.0 / scale(i) : 1.0;
    RowMatrix w = W1() * inv.asDiagonal();
    Eigen::VectorXd b = b1() - w * mean;
    W1() = w;
    b1() = b;
  }

 private:
  std::array<std::size_t, 9> offsets() const {
    const auto s = static_cast<std::size_t>(dims_.s_dim), h = static_cast<std::size_t>(dims_.hidden),
               d = static_cast<std::size_t>(dims_.latent), a = static_cast<std::size_t>(dims_.a_dim);
    const std::array<std::size_t, 8> sizes{h * s, h, d * h, d, h * d, h, a * h, a};
    std::array<std::size_t, 9> out{};
    for (std::size_t i = 0; i < sizes.size(); ++i) out[i + 1] = out[i] + sizes[i];
    return out;
  }

  EncoderDims dims_;
  Eigen::VectorXd values_;
};

// ---------------------------------------------------------------------------
// Single-state evaluation

inline void check_state(const EncoderParams& p, const Eigen::Ref<const Eigen::VectorXd>& state) {
  if (state.size() != p.dims().s_dim) {
    throw ValidationError("state has dimension " + std::to_string(state.size()) + ", expected " +
                          std::to_string(p.dims().s_dim));
  }
}

inline Eigen::VectorXd encode(const EncoderParams& p, const Eigen::Ref<const Eigen::VectorXd>& state) {
  check_state(p, state);
  const Eigen::VectorXd h1 = (p.W1() * state + p.b1()).array().tanh();
  return (p.W2() * h1 + p.b2()).array().tanh();
}

inline Eigen::VectorXd action_from_latent(const EncoderParams& p, const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Eigen::VectorXd h2 = (p.W3() * z + p.b3()).array().tanh();
  return p.W4() * h2 + p.b4();
}

inline Eigen::VectorXd predict_action(const EncoderParams& p, const Eigen::Ref<const Eigen::VectorXd>& state) {
  return action_from_latent(p, encode(p, state));
}

// ---------------------------------------------------------------------------
// Batched forward / backward

struct ForwardCache {
  RowMatrix x;   // n x s_dim
  RowMatrix h1;  // n x hidden
  RowMatrix z;   // n x latent
  RowMatrix h2;  // n x hidden
  RowMatrix a;   // n x a_dim
};

inline ForwardCache forward(const EncoderParams& p, const RowMatrix& x) {
  if (x.cols() != p.dims().s_dim) throw ValidationError("batch has wrong state dimension");
  ForwardCache c;
  c.x = x;
  c.h1 = ((x * p.W1().transpose()).rowwise() + p.b1().transpose()).array().tanh();
  c.z = ((c.h1 * p.W2().transpose()).rowwise() + p.b2().transpose()).array().tanh();
  c.h2 = ((c.z * p.W3().transpose()).rowwise() + p.b3().transpose()).array().tanh();
  c.a = (c.h2 * p.W4().transpose()).rowwise() + p.b4().transpose();
  return c;
}

// Latents only; skips the action head.
inline RowMatrix encode_batch(const EncoderParams& p, const RowMatrix& x) {
  if (x.cols() != p.dims().s_dim) throw ValidationError("batch has wrong state dimension");
  const RowMatrix h1 = ((x * p.W1().transpose()).rowwise() + p.b1().transpose()).array().tanh();
  return ((h1 * p.W2().transpose()).rowwise() + p.b2().transpose()).array().tanh();
}

// Accumulates dLoss/dparams into `grad` given dLoss/da and dLoss/dz for the
// cached batch. Either upstream matrix may be empty (treated as zero).
inline void backward(const EncoderParams& p, const ForwardCache& c, const RowMatrix& d_a,
                     const RowMatrix& d_z_extra, Eigen::Ref<Eigen::VectorXd> grad) {
  const auto& dm = p.dims();
  const Eigen::Index n = c.x.rows();
  auto block = [&](int b, int rows, int cols) {
    return Eigen::Map<RowMatrix>(grad.data() + p.offset(b), rows, cols);
  };
  auto vblock = [&](int b, int len) { return Eigen::Map<Eigen::VectorXd>(grad.data() + p.offset(b), len); };

  RowMatrix d_z = RowMatrix::Zero(n, dm.latent);
  if (d_a.size() != 0) {
    block(6, dm.a_dim, dm.hidden) += d_a.transpose() * c.h2;
    vblock(7, dm.a_dim) += d_a.colwise().sum().transpose();
    const RowMatrix d_h2 = d_a * p.W4();
    const RowMatrix d_pre3 = d_h2.array() * (1.0 - c.h2.array().square());
    block(4, dm.hidden, dm.latent) += d_pre3.transpose() * c.z;
    vblock(5, dm.hidden) += d_pre3.colwise().sum().transpose();
    d_z += d_pre3 * p.W3();
  }
  if (d_z_extra.size() != 0) d_z += d_z_extra;
  const RowMatrix d_pre2 = d_z.array() * (1.0 - c.z.array().square());
  block(2, dm.latent, dm.hidden) += d_pre2.transpose() * c.h1;
  vblock(3, dm.latent) += d_pre2.colwise().sum().transpose();
  const RowMatrix d_h1 = d_pre2 * p.W2();
  const RowMatrix d_pre1 = d_h1.array() * (1.0 - c.h1.array().square());
  block(0, dm.hidden, dm.s_dim) += d_pre1.transpose() * c.x;
  vblock(1, dm.hidden) += d_pre1.colwise().sum().transpose();
}

// Upper bounds on the input-Lipschitz constants of encode / predict_action
// (tanh is 1-Lipschitz, so products of spectral norms bound the composition).
inline double spectral_norm(const RowMatrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

inline double encode_lipschitz_bound(const EncoderParams& p) {
  return spectral_norm(p.W1()) * spectral_norm(p.W2());
}

inline double action_lipschitz_bound(const EncoderParams& p) {
  return encode_lipschitz_bound(p) * spectral_norm(p.W3()) * spectral_norm(p.W4());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

// A differentiable scalar function of a flat parameter vector returning its
// value and analytic gradient.
using LossWithGradient = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares the analytic gradient with central differences on a seeded random
// sample of at least `samples` coordinates (all of them when fewer exist).
inline GradCheckResult grad_check(const Eigen::VectorXd& x, const LossWithGradient& loss,
                                  std::uint64_t seed, std::size_t samples = 50, double step = 1e-5) {
  Eigen::VectorXd analytic = Eigen::VectorXd::Zero(x.size());
  const double f0 = loss(x, &analytic);
  if (!std::isfinite(f0)) throw NumericError("grad_check: loss is not finite");

  std::vector<std::size_t> idx(static_cast<std::size_t>(x.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (idx.size() > samples) idx.resize(samples);

  GradCheckResult r;
  Eigen::VectorXd probe = x;
  for (auto i : idx) {
    const auto k = static_cast<Eigen::Index>(i);
    probe(k) = x(k) + step;
    const double fp = loss(probe, nullptr);
    probe(k) = x(k) - step;
    const double fm = loss(probe, nullptr);
    probe(k) = x(k);
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: loss is not finite");
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic(k) - numeric) / std::max(1e-8, std::abs(numeric));
    if (err > r.max_relative_error || r.checked == 0) {
      r.max_relative_error = std::max(r.max_relative_error, err);
      r.worst_index = i;
      r.worst_analytic = analytic(k);
      r.worst_numeric = numeric;
    }
    ++r.checked;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Binary serialization: "GIBENC1", four little-endian int32 dims
// (s_dim, hidden, latent, a_dim), then every parameter as a little-endian
// IEEE-754 double in flat order.

inline constexpr char kEncoderMagic[] = "GIBENC1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline std::string serialize_params(const EncoderParams& p) {
  std::string out(kEncoderMagic, 7);
  const auto& d = p.dims();
  for (int v : {d.s_dim, d.hidden, d.latent, d.a_dim}) detail::put_u32(out, static_cast<std::uint32_t>(v));
  for (Eigen::Index i = 0; i < p.values().size(); ++i) detail::put_f64(out, p.values()(i));
  return out;
}

inline EncoderParams deserialize_params(std::span<const unsigned char> bytes) {
  if (bytes.size() < 7 + 16 || std::memcmp(bytes.data(), kEncoderMagic, 7) != 0) {
    throw ParseError("not an encoder parameter file (bad magic)", 0);
  }
  const unsigned char* p = bytes.data() + 7;
  EncoderDims d;
  d.s_dim = static_cast<int>(detail::get_u32(p));
  d.hidden = static_cast<int>(detail::get_u32(p + 4));
  d.latent = static_cast<int>(detail::get_u32(p + 8));
  d.a_dim = static_cast<int>(detail::get_u32(p + 12));
  if (d.s_dim <= 0 || d.hidden <= 0 || d.latent <= 0 || d.a_dim <= 0) {
    throw ParseError("encoder parameter file has invalid dimensions", 0);
  }
  const std::size_t n = d.parameter_count();
  if (bytes.size() != 7 + 16 + 8 * n) throw ParseError("encoder parameter file has wrong length", 0);
  Eigen::VectorXd values(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) values(static_cast<Eigen::Index>(i)) = detail::get_f64(p + 16 + 8 * i);
  return EncoderParams(d, std::move(values));
}

inline void save_params(const EncoderParams& p, const std::string& path) {
  csv::write_file(path, serialize_params(p));
}

inline EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

// Stacks all states of a dataset into one matrix (trajectory order).
inline RowMatrix stack_states(const Dataset& d) {
  RowMatrix x(static_cast<Eigen::Index>(d.total_steps()), d.s_dim());
  Eigen::Index r = 0;
  for (const auto& t : d.trajectories()) {
    x.middleRows(r, t.length()) = t.states;
    r += t.length();
  }
  return x;
}

// Per-channel mean and standard deviation over every state in the dataset.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> state_moments(const Dataset& d) {
  const RowMatrix x = stack_states(d);
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::VectorXd var =
      ((x.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(x.rows()))
          .transpose();
  return {mean, var.array().sqrt()};
}

}  // namespace gib
