#pragma once

// Binary support fields on the pixel grid:
//   p(d) ~ exp( sum_t -alpha d_t + sum_{edges (i,j)} beta d_i d_j ),  d in {-1,+1}
// with one coupling per undirected 4-neighbor edge. Messages are log-odds
// log m(+1)/m(-1). Single-row / single-column grids are trees and get one
// exact forward-backward pass; anything else uses damped flooding.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "hutamp/core_data.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

struct MrfParams {
  double alpha = 0.4;
  double beta = 0.4;

  void validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta))
      throw ParameterError("mrf: alpha and beta must be finite");
    if (beta < 0.0) throw ParameterError("mrf: beta must be nonnegative");
  }
};

struct MrfOptions {
  double tol = 1e-6;
  int max_sweeps = 50;
  double damping = 0.5;  // weight on the new message
};

struct EdgeBelief {
  Index i = 0;
  Index j = 0;
  // p[a][b] = Pr(d_i = a ? +1 : -1, d_j = b ? +1 : -1)
  std::array<std::array<double, 2>, 2> p{};

  double mean_product() const { return p[1][1] + p[0][0] - p[1][0] - p[0][1]; }
};

struct MrfResult {
  Vector extrinsic;  // pi_t, excluding incoming[t]
  Vector posterior;
  std::vector<EdgeBelief> pairs;
  bool converged = false;
  int sweeps = 0;
};

// 4-neighbor edge list in row-major order: horizontal edges first per row.
inline std::vector<std::pair<Index, Index>> grid_edges(const GridShape& g) {
  std::vector<std::pair<Index, Index>> e;
  e.reserve(static_cast<std::size_t>(2 * g.size()));
  for (Index r = 0; r < g.rows; ++r)
    for (Index c = 0; c < g.cols; ++c) {
      const Index t = pixel_index(g, r, c);
      if (c + 1 < g.cols) e.emplace_back(t, pixel_index(g, r, c + 1));
      if (r + 1 < g.rows) e.emplace_back(t, pixel_index(g, r + 1, c));
    }
  return e;
}

namespace detail {

// Log-odds message through an edge with coupling beta.
inline double ising_edge_message(double beta, double h) {
  return 2.0 * std::atanh(std::tanh(beta) * std::tanh(0.5 * h));
}

}  // namespace detail

inline MrfResult mrf_bp(const Vector& incoming, const GridShape& grid,
                        const MrfParams& params, const MrfOptions& opts = {}) {
  params.validate();
  const Index T = grid.size();
  if (incoming.size() != T)
    throw ShapeError("mrf_bp: incoming has " + std::to_string(incoming.size()) +
                     " entries, grid has " + std::to_string(T));
  Vector lam(T);
  for (Index t = 0; t < T; ++t) lam[t] = logit(clamp_probability(incoming[t]));
  const double unary = -2.0 * params.alpha;

  const auto edges = grid_edges(grid);
  const std::size_t E = edges.size();
  // msg[2e] : i -> j, msg[2e+1] : j -> i.
  std::vector<double> msg(2 * E, 0.0);
  // For each node, the directed message slots arriving at it.
  std::vector<std::vector<std::size_t>> in_slots(static_cast<std::size_t>(T));
  for (std::size_t e = 0; e < E; ++e) {
    in_slots[static_cast<std::size_t>(edges[e].second)].push_back(2 * e);
    in_slots[static_cast<std::size_t>(edges[e].first)].push_back(2 * e + 1);
  }
  auto total_in = [&](Index t) {
    double s = 0.0;
    for (auto k : in_slots[static_cast<std::size_t>(t)]) s += msg[k];
    return s;
  };
  // Cavity field of the sender for directed slot k.
  auto cavity = [&](std::size_t k) {
    const std::size_t e = k / 2;
    const bool forward = (k % 2) == 0;
    const Index from = forward ? edges[e].first : edges[e].second;
    const std::size_t back = forward ? k + 1 : k - 1;
    return unary + lam[from] + total_in(from) - msg[back];
  };

  MrfResult out;
  const bool chain = grid.rows == 1 || grid.cols == 1;
  if (chain) {
    // Edges are in path order; forward then backward is exact.
    for (std::size_t e = 0; e < E; ++e)
      msg[2 * e] = detail::ising_edge_message(params.beta, cavity(2 * e));
    for (std::size_t e = E; e-- > 0;)
      msg[2 * e + 1] = detail::ising_edge_message(params.beta, cavity(2 * e + 1));
    out.converged = true;
    out.sweeps = 1;
  } else {
    std::vector<double> next(2 * E);
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      double change = 0.0;
      for (std::size_t k = 0; k < 2 * E; ++k) {
        const double fresh = detail::ising_edge_message(params.beta, cavity(k));
        next[k] = opts.damping * fresh + (1.0 - opts.damping) * msg[k];
        change = std::max(change, std::abs(next[k] - msg[k]));
      }
      msg.swap(next);
      out.sweeps = sweep + 1;
      if (change < opts.tol) {
        out.converged = true;
        break;
      }
    }
  }

  out.extrinsic.resize(T);
  out.posterior.resize(T);
  for (Index t = 0; t < T; ++t) {
    const double ext = unary + total_in(t);
    out.extrinsic[t] = clamp_probability(logistic(ext));
    out.posterior[t] = logistic(ext + lam[t]);
  }
  out.pairs.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    const double hi = cavity(2 * e);
    const double hj = cavity(2 * e + 1);
    EdgeBelief& b = out.pairs[e];
    b.i = edges[e].first;
    b.j = edges[e].second;
    double lg[2][2];
    double mx = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c) {
        const double di = a ? 1.0 : -1.0;
        const double dj = c ? 1.0 : -1.0;
        lg[a][c] = params.beta * di * dj + 0.5 * hi * di + 0.5 * hj * dj;
        mx = std::max(mx, lg[a][c]);
      }
    double z = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c) z += (b.p[a][c] = std::exp(lg[a][c] - mx));
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c) b.p[a][c] /= z;
  }
  return out;
}

struct MrfEmOptions {
  int steps = 5;
  int max_halvings = 10;
};

namespace detail {

// Pseudo-likelihood pieces under the beliefs: E[d_t], sum_k E[d_t d_k], and
// the distribution of the neighbor sum s_t from the neighbor marginals.
struct PseudoLikelihood {
  std::vector<double> mean_d;
  std::vector<double> corr;  // sum over neighbors of E[d_t d_k]
  std::vector<std::vector<std::pair<double, double>>> nbr_sum;  // (s, prob)

  PseudoLikelihood(const GridShape& grid, const Vector& posterior,
                   const std::vector<EdgeBelief>& pairs) {
    const Index T = grid.size();
    mean_d.resize(T);
    corr.assign(T, 0.0);
    nbr_sum.resize(T);
    for (Index t = 0; t < T; ++t) mean_d[t] = 2.0 * posterior[t] - 1.0;
    std::vector<std::vector<Index>> nbrs(T);
    for (const auto& p : pairs) {
      const double m = p.mean_product();
      corr[p.i] += m;
      corr[p.j] += m;
      nbrs[p.i].push_back(p.j);
      nbrs[p.j].push_back(p.i);
    }
    for (Index t = 0; t < T; ++t) {
      const auto& nb = nbrs[t];
      const std::size_t k = nb.size();
      std::vector<double> dist(2 * k + 1, 0.0);  // index s + k
      dist[k] = 1.0;
      for (Index u : nb) {
        const double pu = posterior[u];
        std::vector<double> nd(2 * k + 1, 0.0);
        for (std::size_t s = 0; s < dist.size(); ++s) {
          if (dist[s] == 0.0) continue;
          if (s + 1 < nd.size()) nd[s + 1] += dist[s] * pu;
          if (s >= 1) nd[s - 1] += dist[s] * (1.0 - pu);
        }
        dist.swap(nd);
      }
      for (std::size_t s = 0; s < dist.size(); ++s)
        if (dist[s] > 0.0)
          nbr_sum[t].emplace_back(static_cast<double>(s) - static_cast<double>(k), dist[s]);
    }
  }

  static double log2cosh(double x) {
    const double ax = std::abs(x);
    return ax + std::log1p(std::exp(-2.0 * ax));
  }

  // Mean pseudo-log-likelihood per pixel, with gradient and Hessian.
  double eval(double alpha, double beta, Eigen::Vector2d* grad = nullptr,
              Eigen::Matrix2d* hess = nullptr) const {
    double val = 0.0;
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
    const std::size_t T = mean_d.size();
    for (std::size_t t = 0; t < T; ++t) {
      val += -alpha * mean_d[t] + beta * corr[t];
      g[0] += -mean_d[t];
      g[1] += corr[t];
      for (const auto& [s, p] : nbr_sum[t]) {
        const double x = beta * s - alpha;
        const double th = std::tanh(x);
        const double sech2 = 1.0 - th * th;
        val -= p * log2cosh(x);
        g[0] += p * th;
        g[1] -= p * s * th;
        h(0, 0) -= p * sech2;
        h(0, 1) += p * s * sech2;
        h(1, 1) -= p * s * s * sech2;
      }
    }
    h(1, 0) = h(0, 1);
    const double n = static_cast<double>(T);
    if (grad) *grad = g / n;
    if (hess) *hess = h / n;
    return val / n;
  }
};

}  // namespace detail

// Projected Newton ascent on the pseudo-likelihood under the BP beliefs,
// with backtracking; beta is kept nonnegative.
inline MrfParams em_update_mrf(const GridShape& grid, const Vector& posterior,
                               const std::vector<EdgeBelief>& pairs,
                               const MrfParams& old, const MrfEmOptions& opts = {},
                               bool learn_beta = true) {
  const detail::PseudoLikelihood pl(grid, posterior, pairs);
  MrfParams cur = old;
  cur.beta = std::max(0.0, cur.beta);
  if (!learn_beta) cur.beta = old.beta;
  Eigen::Vector2d g;
  Eigen::Matrix2d h;
  double val = pl.eval(cur.alpha, cur.beta, &g, &h);
  for (int step = 0; step < opts.steps; ++step) {
    if (!learn_beta) {
      g[1] = 0.0;
      h(0, 1) = h(1, 0) = 0.0;
      h(1, 1) = -1.0;
    }
    if (g.norm() < 1e-14) break;
    // Regularize in case beliefs leave the Hessian singular.
    Eigen::Matrix2d neg = -h;
    neg.diagonal().array() += 1e-9 + 1e-6 * neg.diagonal().cwiseAbs().maxCoeff();
    Eigen::Vector2d dir = neg.ldlt().solve(g);
    if (!dir.allFinite()) dir = g;
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k <= opts.max_halvings; ++k, t *= 0.5) {
      MrfParams trial{cur.alpha + t * dir[0], cur.beta + t * dir[1]};
      trial.beta = learn_beta ? std::max(0.0, trial.beta) : old.beta;
      const double v = pl.eval(trial.alpha, trial.beta);
      if (v >= val) {
        moved = v > val || (trial.alpha != cur.alpha || trial.beta != cur.beta);
        cur = trial;
        val = pl.eval(cur.alpha, cur.beta, &g, &h);
        break;
      }
    }
    if (!moved) break;
  }
  return cur;
}

inline MrfParams em_update_mrf(const GridShape& grid, const MrfResult& bp,
                               const MrfParams& old, const MrfEmOptions& opts = {},
                               bool learn_beta = true) {
  return em_update_mrf(grid, bp.posterior, bp.pairs, old, opts, learn_beta);
}

}  // namespace hutamp
