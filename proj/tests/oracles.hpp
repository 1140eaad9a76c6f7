#pragma once

// Independent reference implementations used as test oracles. Written with
// plain loops over std::vector so they share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "gib/dataset.hpp"
#include "gib/encoder.hpp"

namespace oracle {

using Vec = std::vector<double>;

struct Layer {
  std::vector<Vec> w;  // rows x cols
  Vec b;
};

inline Layer layer(const gib::EncoderParams& p, int block, int rows, int cols) {
  Layer l;
  const double* base = p.data() + p.offset(block);
  const double* bias = p.data() + p.offset(block + 1);
  for (int r = 0; r < rows; ++r) {
    l.w.emplace_back(base + r * cols, base + (r + 1) * cols);
    l.b.push_back(bias[r]);
  }
  return l;
}

inline Vec apply(const Layer& l, const Vec& x, bool squash) {
  Vec out(l.w.size());
  for (std::size_t r = 0; r < l.w.size(); ++r) {
    double s = l.b[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += l.w[r][c] * x[c];
    out[r] = squash ? std::tanh(s) : s;
  }
  return out;
}

struct Forward {
  Vec z;
  Vec a;
};

inline Forward mlp(const gib::EncoderParams& p, const Vec& x) {
  const auto& d = p.dims();
  const Vec h1 = apply(layer(p, 0, d.hidden, d.s_dim), x, true);
  Forward f;
  f.z = apply(layer(p, 2, d.latent, d.hidden), h1, true);
  const Vec h2 = apply(layer(p, 4, d.hidden, d.latent), f.z, true);
  f.a = apply(layer(p, 6, d.a_dim, d.hidden), h2, false);
  return f;
}

inline Vec row(const gib::RowMatrix& m, int r) {
  Vec v(static_cast<std::size_t>(m.cols()));
  for (int c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

// (1/N) sum_i sum_t u_it * 0.5 * |f(s_it) - a_it|^2
inline double bc_loss(const gib::EncoderParams& p, const gib::Dataset& d, const std::vector<Vec>& u) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int t = 0; t < d[i].length(); ++t) {
      const double w = u[i][static_cast<std::size_t>(t)];
      if (w == 0.0) continue;
      const Vec pred = mlp(p, row(d[i].states, t)).a;
      double sq = 0.0;
      for (std::size_t k = 0; k < pred.size(); ++k) {
        const double e = pred[k] - d[i].actions(t, static_cast<int>(k));
        sq += e * e;
      }
      total += w * 0.5 * sq;
    }
  }
  return total / static_cast<double>(d.size());
}

inline double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double knn_distance(const std::vector<Vec>& pts, std::size_t p, int k) {
  Vec ds;
  for (std::size_t o = 0; o < pts.size(); ++o) {
    if (o != p) ds.push_back(dist(pts[p], pts[o]));
  }
  std::sort(ds.begin(), ds.end());
  return ds[static_cast<std::size_t>(k - 1)];
}

// Textbook local outlier factor: N_k includes ties at the k-distance,
// reach-dist_k(p, o) = max(k-dist(o), d(p, o)).
inline Vec lof(const std::vector<Vec>& pts, int k) {
  const std::size_t n = pts.size();
  Vec kd(n);
  for (std::size_t p = 0; p < n; ++p) kd[p] = knn_distance(pts, p, k);
  std::vector<std::vector<std::size_t>> hood(n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t o = 0; o < n; ++o) {
      if (o != p && dist(pts[p], pts[o]) <= kd[p]) hood[p].push_back(o);
    }
  }
  Vec lrd(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (auto o : hood[p]) s += std::max(kd[o], dist(pts[p], pts[o]));
    lrd[p] = 1.0 / (s / static_cast<double>(hood[p].size()));
  }
  Vec out(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (auto o : hood[p]) s += lrd[o];
    out[p] = s / static_cast<double>(hood[p].size()) / lrd[p];
  }
  return out;
}

// sqrt(x^T A^{-1} x) with A^{-1} from Gauss-Jordan elimination.
inline double mahalanobis(const Vec& x, const Vec& mu, std::vector<Vec> a) {
  const std::size_t n = x.size();
  std::vector<Vec> inv(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    const double d = a[c][c];
    for (std::size_t k = 0; k < n; ++k) a[c][k] /= d, inv[c][k] /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) a[r][k] -= f * a[c][k], inv[r][k] -= f * inv[c][k];
    }
  }
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) q += (x[i] - mu[i]) * inv[i][j] * (x[j] - mu[j]);
  }
  return std::sqrt(q);
}

// Small random dataset with the given dimensions.
inline gib::Dataset random_dataset(int n, int T, int s_dim, int a_dim, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<gib::Trajectory> trajs;
  for (int i = 0; i < n; ++i) {
    gib::Trajectory t;
    t.id = "t" + std::to_string(i);
    const int len = T + i % 3;
    t.states = gib::RowMatrix(len, s_dim);
    t.actions = gib::RowMatrix(len, a_dim);
    for (int r = 0; r < len; ++r) {
      for (int c = 0; c < s_dim; ++c) t.states(r, c) = g(rng);
      for (int c = 0; c < a_dim; ++c) t.actions(r, c) = 0.5 * g(rng);
    }
    trajs.push_back(std::move(t));
  }
  return gib::Dataset(std::move(trajs));
}

}  // namespace oracle
