#pragma once

// EM updates for the noise variances and the NNGM slab parameters.
//
// The NNGM M-step is exact: for each component the weighted posterior
// moments (m1, m2) define a truncated-normal maximum-likelihood problem,
// solved by Newton's method in natural parameters (theta/phi, -1/(2 phi)),
// where the log-likelihood is concave.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "hutamp/core_data.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

inline constexpr double kNngmPhiMin = 1e-12;
inline constexpr double kNngmPhiMax = 1e8;
inline constexpr double kNngmThetaMax = 1e6;
inline constexpr double kNngmWeightFloor = 1e-10;

namespace detail {

// Raw moments E[x^k], k = 1..4, of N_+(theta, phi).
inline std::array<double, 4> trunc_raw_moments(double theta, double phi) {
  const Moments mo = trunc_gauss_moments(theta, phi);
  std::array<double, 4> m{};
  m[0] = mo.mean;
  m[1] = mo.var + mo.mean * mo.mean;
  m[2] = theta * m[1] + 2.0 * phi * m[0];
  m[3] = theta * m[2] + 3.0 * phi * m[1];
  return m;
}

// Per-sample mean log N_+(x; theta, phi) given E[x] = m1, E[x^2] = m2.
inline double trunc_loglik(double theta, double phi, double m1, double m2) {
  const double a = -theta / std::sqrt(phi);
  if (a <= 0.0)
    return -0.5 * std::log(phi) - (m2 - 2.0 * theta * m1 + theta * theta) / (2.0 * phi) -
           log_phic(a) - kLogSqrt2Pi;
  // theta^2/(2 phi) + log Phi_c(a) cancel for large a; fold them into the
  // Mills ratio instead.
  return -0.5 * std::log(phi) - (m2 - 2.0 * theta * m1) / (2.0 * phi) + std::log(inv_mills(a));
}

}  // namespace detail

// Truncated-normal fit to weighted moments (m1, m2), started from `init`.
inline TruncGauss fit_trunc_gauss(double m1, double m2, TruncGauss init,
                                  int max_iters = 60) {
  auto in_bounds = [](double theta, double phi) {
    return std::isfinite(theta) && std::abs(theta) <= kNngmThetaMax &&
           phi >= kNngmPhiMin && phi <= kNngmPhiMax;
  };
  init.phi = std::clamp(init.phi, kNngmPhiMin, kNngmPhiMax);
  init.theta = std::clamp(init.theta, -kNngmThetaMax, kNngmThetaMax);
  double e1 = init.theta / init.phi;
  double e2 = -0.5 / init.phi;
  double cur = detail::trunc_loglik(init.theta, init.phi, m1, m2);
  for (int it = 0; it < max_iters; ++it) {
    const double theta = -e1 / (2.0 * e2);
    const double phi = -0.5 / e2;
    const auto mom = detail::trunc_raw_moments(theta, phi);
    Eigen::Vector2d g(m1 - mom[0], m2 - mom[1]);
    if (std::abs(g[0]) <= 1e-13 * std::abs(m1) && std::abs(g[1]) <= 1e-13 * std::abs(m2)) break;
    Eigen::Matrix2d cov;
    cov << mom[1] - mom[0] * mom[0], mom[2] - mom[0] * mom[1],
        mom[2] - mom[0] * mom[1], mom[3] - mom[1] * mom[1];
    cov.diagonal().array() += 1e-14 * cov.diagonal().cwiseAbs().maxCoeff() + 1e-300;
    // Newton first; where it would leave the domain (e2 >= 0) use the
    // scaled gradient, which always points back toward the interior optimum.
    const Eigen::Vector2d newton = cov.ldlt().solve(g);
    const Eigen::Vector2d grad = g / cov.diagonal().maxCoeff();
    bool improved = false;
    for (int which = 0; which < 2 && !improved; ++which) {
      const Eigen::Vector2d& step = which == 0 ? newton : grad;
      if (!step.allFinite() || (which == 0 && !(e2 + step[1] < 0.0))) continue;
      double t = 1.0;
      for (int k = 0; k < 60 && !improved; ++k, t *= 0.5) {
        const double n1 = e1 + t * step[0];
        const double n2 = e2 + t * step[1];
        if (!(n2 < 0.0)) continue;
        const double th = -n1 / (2.0 * n2);
        const double ph = -0.5 / n2;
        if (!in_bounds(th, ph)) continue;
        const double val = detail::trunc_loglik(th, ph, m1, m2);
        if (val > cur) {
          improved = true;
          e1 = n1;
          e2 = n2;
          cur = val;
        }
      }
    }
    if (!improved) break;
  }
  return {-e1 / (2.0 * e2), -0.5 / e2};
}

// Sufficient statistics for one material's slab, accumulated over pixels.
struct NngmAccumulator {
  std::vector<double> w, s1, s2;  // per component: mass, sum E[a], sum E[a^2]

  explicit NngmAccumulator(std::size_t L) : w(L, 0.0), s1(L, 0.0), s2(L, 0.0) {}

  void add(const SpikeSlab& prior, double rhat, double nu) {
    std::vector<ActiveComponent> comps;
    const SpikeSlabPosterior post = spike_slab_posterior(prior, rhat, nu, &comps);
    add(post.post_pi, comps);
  }

  void add(double post_pi, const std::vector<ActiveComponent>& comps) {
    for (std::size_t l = 0; l < comps.size(); ++l) {
      const double wt = post_pi * comps[l].weight;
      w[l] += wt;
      s1[l] += wt * comps[l].mean;
      s2[l] += wt * (comps[l].var + comps[l].mean * comps[l].mean);
    }
  }
};

struct NngmEmResult {
  NngmParams params;
  bool held = false;  // no active mass; parameters left unchanged
};

inline NngmEmResult nngm_m_step(const NngmAccumulator& acc, const NngmParams& old) {
  const std::size_t L = old.components();
  double total = 0.0;
  for (double v : acc.w) total += v;
  NngmEmResult out{old, false};
  if (!(total > 1e-10)) {
    out.held = true;
    return out;
  }
  for (std::size_t l = 0; l < L; ++l) {
    out.params.omega[l] = std::max(acc.w[l] / total, kNngmWeightFloor);
    if (acc.w[l] > 1e-10 * total) {
      const double m1 = acc.s1[l] / acc.w[l];
      const double m2 = std::max(acc.s2[l] / acc.w[l], m1 * m1 * (1.0 + 1e-12));
      const TruncGauss fit = fit_trunc_gauss(m1, m2, {old.theta[l], old.phi[l]});
      out.params.theta[l] = fit.theta;
      out.params.phi[l] = fit.phi;
    }
  }
  double s = 0.0;
  for (double v : out.params.omega) s += v;
  for (double& v : out.params.omega) v /= s;
  return out;
}

// One EM pass for a material: activity probabilities `pi`, and the
// pseudo-measurements (rhat, nu) of its abundances.
inline NngmEmResult em_update_nngm(const NngmParams& old, const Vector& pi,
                                   const Vector& rhat, const Vector& nu) {
  if (pi.size() != rhat.size() || nu.size() != rhat.size())
    throw ShapeError("em_update_nngm: pi, rhat, nu lengths differ");
  NngmAccumulator acc(old.components());
  for (Index t = 0; t < rhat.size(); ++t) acc.add({pi[t], old}, rhat[t], nu[t]);
  return nngm_m_step(acc, old);
}

namespace detail {

inline NngmParams compute_uniform_fit(int L) {
  // Weighted-sample EM against Uniform[0,1] on a fine midpoint grid.
  constexpr int kPoints = 1000;
  NngmParams p;
  for (int l = 0; l < L; ++l) {
    p.omega.push_back(1.0 / L);
    p.theta.push_back((l + 0.5) / L);
    p.phi.push_back(0.25 / (L * L));
  }
  std::vector<double> xs(kPoints);
  for (int i = 0; i < kPoints; ++i) xs[i] = (i + 0.5) / kPoints;
  std::vector<double> logp(L);
  std::vector<double> lognorm(L);
  for (int iter = 0; iter < 400; ++iter) {
    NngmAccumulator acc(L);
    for (int l = 0; l < L; ++l)
      lognorm[l] = trunc_gauss_moments(p.theta[l], p.phi[l]).log_normalizer;
    for (double x : xs) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int l = 0; l < L; ++l) {
        logp[l] = std::log(p.omega[l]) + log_normal_pdf(x, p.theta[l], p.phi[l]) -
                  lognorm[l];
        mx = std::max(mx, logp[l]);
      }
      double z = 0.0;
      for (int l = 0; l < L; ++l) z += std::exp(logp[l] - mx);
      for (int l = 0; l < L; ++l) {
        const double r = std::exp(logp[l] - mx) / z;
        acc.w[l] += r;
        acc.s1[l] += r * x;
        acc.s2[l] += r * x * x;
      }
    }
    p = nngm_m_step(acc, p).params;
  }
  return p;
}

}  // namespace detail

// Maximum-likelihood L-component NNGM fit to Uniform[0,1]; computed once per L.
inline NngmParams uniform_nngm_fit(int L) {
  if (L < 1) throw ParameterError("uniform_nngm_fit: L must be >= 1");
  static std::mutex mu;
  static std::map<int, NngmParams> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(L);
  if (it == cache.end()) it = cache.emplace(L, detail::compute_uniform_fit(L)).first;
  return it->second;
}

inline constexpr double kPsiRelFloor = 1e-12;

// psi_m = mean_t[(y_mt - zhat_mt)^2 + nuz_mt] over the Gaussian rows.
inline Vector em_update_noise(const Matrix& ytilde, const Matrix& zhat,
                              const Matrix& nuz) {
  if (zhat.rows() < ytilde.rows() || zhat.cols() != ytilde.cols() ||
      nuz.rows() != zhat.rows() || nuz.cols() != zhat.cols())
    throw ShapeError("em_update_noise: shape mismatch");
  const Index M = ytilde.rows();
  const double T = static_cast<double>(ytilde.cols());
  const double scale = ytilde.squaredNorm() / (static_cast<double>(M) * T);
  const double floor = std::max(kPsiRelFloor * scale, 1e-300);
  Vector psi(M);
  for (Index m = 0; m < M; ++m) {
    const double r = (ytilde.row(m) - zhat.row(m)).squaredNorm() + nuz.row(m).sum();
    psi[m] = std::max(r / T, floor);
  }
  return psi;
}

}  // namespace hutamp
