#pragma once

// Closed-form scalar denoisers for truncated-Gaussian, non-negative Gaussian
// mixture (NNGM) and Bernoulli-NNGM priors under Gaussian pseudo-likelihoods.
//
// N_+(x; theta, phi) is N(x; theta, phi) restricted to x >= 0 and normalized
// by Phi_c(-theta / sqrt(phi)). All tail ratios are evaluated without forming
// the (possibly underflowing) normalizers directly.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "hutamp/errors.hpp"

namespace hutamp {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kProbClampLo = 1e-12;
inline constexpr double kProbClampHi = 1.0 - 1e-12;

inline double clamp_probability(double p) {
  return std::clamp(p, kProbClampLo, kProbClampHi);
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}

namespace detail {

// Beyond this point Phi_c is evaluated through its continued fraction.
inline constexpr double kTailSwitch = 25.0;

// Denominators of the Mills-ratio continued fraction
//   Phi_c(a)/phi(a) = 1/(a + 1/(a + 2/(a + 3/(...)))),
// D_k = a + (k+1)/D_{k+1}; returns D_1, D_2, D_3. Only used for a >= 25,
// where 40 levels are far beyond double precision.
inline std::array<double, 3> mills_tail(double a) {
  double d = a;
  for (int k = 40; k >= 4; --k) d = a + static_cast<double>(k) / d;
  const double d3 = d;
  const double d2 = a + 3.0 / d3;
  const double d1 = a + 2.0 / d2;
  return {d1, d2, d3};
}

}  // namespace detail

// log Phi_c(a), the log upper-tail probability of the unit normal.
inline double log_phic(double a) {
  if (a < detail::kTailSwitch)
    return std::log(0.5 * std::erfc(a / std::numbers::sqrt2));
  const auto d = detail::mills_tail(a);
  const double h = a + 1.0 / d[0];
  return -0.5 * a * a - kLogSqrt2Pi - std::log(h);
}

// Inverse Mills ratio phi(a) / Phi_c(a).
inline double inv_mills(double a) {
  if (a < detail::kTailSwitch) {
    const double pdf = std::exp(-0.5 * a * a - kLogSqrt2Pi);
    const double tail = 0.5 * std::erfc(a / std::numbers::sqrt2);
    return pdf / tail;
  }
  return a + 1.0 / detail::mills_tail(a)[0];
}

struct GaussianBelief {
  double mean = 0.0;
  double var = 1.0;
};

struct TruncGauss {
  double theta = 0.0;
  double phi = 1.0;
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double log_normalizer = 0.0;  // log Phi_c(-theta/sqrt(phi))
};

struct TruncPosterior {
  double mean = 0.0;
  double var = 0.0;
  double log_evidence = 0.0;
};

// Mean, variance and log normalizer of N_+(theta, phi).
inline Moments trunc_gauss_moments(double theta, double phi) {
  if (!(phi > 0.0) || !std::isfinite(phi))
    throw ParameterError("trunc_gauss_moments: phi must be positive");
  const double sd = std::sqrt(phi);
  const double a = -theta / sd;
  Moments out;
  out.log_normalizer = log_phic(a);
  if (a < detail::kTailSwitch) {
    const double h = inv_mills(a);
    out.mean = theta + sd * h;
    out.var = phi * (1.0 + a * h - h * h);
    if (!(out.var > 0.0)) out.var = std::numeric_limits<double>::min();
    out.var = std::min(out.var, phi);
  } else {
    // Deep truncation: mean = sd*(h - a) and var/phi = 1 - h(h - a), both
    // rewritten in terms of the continued-fraction tail to avoid cancellation.
    const auto d = detail::mills_tail(a);
    out.mean = sd / d[0];
    out.var = phi * (a + 4.0 / d[1] - 3.0 / d[2]) / (d[0] * d[0] * d[1]);
  }
  return out;
}

inline Moments trunc_gauss_moments(const TruncGauss& p) {
  return trunc_gauss_moments(p.theta, p.phi);
}

// Product of two Gaussian densities (as a function of the shared variable).
inline GaussianBelief gaussian_product(double m1, double v1, double m2,
                                       double v2) {
  if (!(v1 > 0.0) || !(v2 > 0.0))
    throw ParameterError("gaussian_product: variances must be positive");
  const double p1 = 1.0 / v1;
  const double p2 = 1.0 / v2;
  const double v = 1.0 / (p1 + p2);
  return {v * (m1 * p1 + m2 * p2), v};
}

inline GaussianBelief gaussian_product(const GaussianBelief& a,
                                       const GaussianBelief& b) {
  return gaussian_product(a.mean, a.var, b.mean, b.var);
}

// Posterior of x under prior N_+(theta, phi) and likelihood N(rhat; x, nu).
inline TruncPosterior trunc_gauss_posterior(const TruncGauss& prior,
                                            double rhat, double nu) {
  if (!(nu > 0.0))
    throw ParameterError("trunc_gauss_posterior: nu must be positive");
  if (!(prior.phi > 0.0))
    throw ParameterError("trunc_gauss_posterior: phi must be positive");
  const GaussianBelief fused = gaussian_product(prior.theta, prior.phi, rhat, nu);
  const Moments post = trunc_gauss_moments(fused.mean, fused.var);
  TruncPosterior out;
  out.mean = post.mean;
  out.var = post.var;
  out.log_evidence = log_normal_pdf(rhat, prior.theta, prior.phi + nu) +
                     post.log_normalizer -
                     log_phic(-prior.theta / std::sqrt(prior.phi));
  return out;
}

// Non-negative Gaussian mixture sum_l omega_l N_+(theta_l, phi_l).
struct NngmParams {
  std::vector<double> omega;
  std::vector<double> theta;
  std::vector<double> phi;

  std::size_t components() const { return omega.size(); }

  void validate() const {
    const std::size_t n = omega.size();
    if (n == 0 || theta.size() != n || phi.size() != n)
      throw ParameterError("NNGM: component arrays must be non-empty and equal length");
    double sum = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      if (!(omega[l] >= 0.0)) throw ParameterError("NNGM: negative weight");
      if (!(phi[l] > 0.0)) throw ParameterError("NNGM: phi must be positive");
      if (!std::isfinite(theta[l])) throw ParameterError("NNGM: non-finite theta");
      sum += omega[l];
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ParameterError("NNGM: weights must sum to one");
  }

  static NngmParams single(double theta, double phi) {
    return NngmParams{{1.0}, {theta}, {phi}};
  }
};

struct SpikeSlab {
  double pi = 0.5;
  NngmParams slab;
};

// Per-component pieces of the active-branch posterior.
struct ComponentPosterior {
  double log_weighted_evidence;  // log(omega_l) + log Z_l
  double mean;
  double var;
};

// Active-branch component l: responsibility given activity, posterior moments.
struct ActiveComponent {
  double weight;
  double mean;
  double var;
};

struct SpikeSlabPosterior {
  double post_pi = 0.0;
  double mean = 0.0;
  double var = 0.0;
  double llr_active = 0.0;
};

namespace detail {

// Log evidence of the slab, log int zeta(a) N(a; rhat, nu) da, filling the
// per-component posteriors into `parts`.
template <class Parts>
double slab_log_evidence(const NngmParams& slab, double rhat, double nu,
                         Parts& parts) {
  const std::size_t n = slab.components();
  parts.resize(n);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < n; ++l) {
    if (slab.omega[l] <= 0.0) {
      parts[l] = {-std::numeric_limits<double>::infinity(), 0.0, 0.0};
      continue;
    }
    const TruncPosterior tp =
        trunc_gauss_posterior(TruncGauss{slab.theta[l], slab.phi[l]}, rhat, nu);
    parts[l] = {std::log(slab.omega[l]) + tp.log_evidence, tp.mean, tp.var};
    best = std::max(best, parts[l].log_weighted_evidence);
  }
  double acc = 0.0;
  for (const auto& p : parts) acc += std::exp(p.log_weighted_evidence - best);
  return best + std::log(acc);
}

struct SmallParts {
  std::array<ComponentPosterior, 8> fixed{};
  std::vector<ComponentPosterior> dynamic;
  std::size_t count = 0;
  void resize(std::size_t n) {
    count = n;
    if (n > fixed.size()) dynamic.resize(n);
  }
  ComponentPosterior& operator[](std::size_t i) {
    return count > fixed.size() ? dynamic[i] : fixed[i];
  }
  ComponentPosterior* begin() { return count > fixed.size() ? dynamic.data() : fixed.data(); }
  ComponentPosterior* end() { return begin() + count; }
};

}  // namespace detail

// Log-likelihood ratio of the active vs inactive branch:
// log int zeta(a) N(a; rhat, nu) da - log N(0; rhat, nu).
inline double slab_llr(const NngmParams& slab, double rhat, double nu) {
  if (!(nu > 0.0)) throw ParameterError("slab_llr: nu must be positive");
  detail::SmallParts parts;
  return detail::slab_log_evidence(slab, rhat, nu, parts) -
         log_normal_pdf(0.0, rhat, nu);
}

// Posterior moments under (1-pi) delta(a) + pi zeta(a), with the per-component
// responsibilities optionally reported through `components_out`
// (weights conditional on the active branch).
inline SpikeSlabPosterior spike_slab_posterior(
    const SpikeSlab& prior, double rhat, double nu,
    std::vector<ActiveComponent>* components_out = nullptr) {
  if (!(nu > 0.0))
    throw ParameterError("spike_slab_posterior: nu must be positive");
  if (!(prior.pi >= 0.0 && prior.pi <= 1.0))
    throw ParameterError("spike_slab_posterior: pi outside [0, 1]");
  const double pi = clamp_probability(prior.pi);

  detail::SmallParts parts;
  const double log_active = detail::slab_log_evidence(prior.slab, rhat, nu, parts);
  SpikeSlabPosterior out;
  out.llr_active = log_active - log_normal_pdf(0.0, rhat, nu);
  out.post_pi = logistic(logit(pi) + out.llr_active);

  double m1 = 0.0;
  double m2 = 0.0;
  for (auto& p : parts) {
    const double w = std::exp(p.log_weighted_evidence - log_active);
    m1 += w * p.mean;
    m2 += w * (p.var + p.mean * p.mean);
  }
  const double active_var = std::max(0.0, m2 - m1 * m1);
  out.mean = out.post_pi * m1;
  // Law of total variance over the spike/slab branches.
  out.var = out.post_pi * active_var + out.post_pi * (1.0 - out.post_pi) * m1 * m1;

  if (components_out) {
    components_out->clear();
    for (auto& p : parts)
      components_out->push_back(
          {std::exp(p.log_weighted_evidence - log_active), p.mean, p.var});
  }
  return out;
}

struct BernoulliBelief {
  double p_active = 0.5;
};

// Message from the abundance factor to its support variable: the activity
// probability implied by the slab evidence alone (independent of the prior
// activity probability).
inline BernoulliBelief gtod_message(double /*prior_pi*/, const NngmParams& slab,
                                    double rhat, double nu) {
  return {logistic(slab_llr(slab, rhat, nu))};
}

}  // namespace hutamp
