#pragma once

// Stationary first-order Gauss-Markov chains over the spectral index:
//   e_1 ~ N(kappa, sigma2)
//   e_m | e_{m-1} ~ N((1-eta) e_{m-1} + eta kappa, eta (2-eta) sigma2)
// so every e_m has marginal N(kappa, sigma2) and lag-one correlation 1-eta.
// Forward messages are carried in moment form, backward messages in
// information form so that flat inputs and eta = 0 need no special cases.

#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "hutamp/errors.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

struct GmChainParams {
  double kappa = 0.0;
  double sigma2 = 1.0;
  double eta = 1.0;

  void validate() const {
    if (!std::isfinite(kappa)) throw ParameterError("gm: kappa must be finite");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
      throw ParameterError("gm: sigma2 must be positive");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("gm: eta outside [0, 1]");
  }
};

inline constexpr double kGmSigma2Floor = 1e-12;
inline constexpr double kGmEtaMin = 1e-6;

struct GmSmoothResult {
  std::vector<GaussianBelief> extrinsic;  // chain message into each e_m
  std::vector<GaussianBelief> posterior;
  std::vector<double> lag_cov;  // Cov(e_m, e_{m+1} | all), length M-1

  double lag_moment(std::size_t m) const {
    return lag_cov[m] + posterior[m].mean * posterior[m + 1].mean;
  }
};

// Incoming variances may be +inf (no information).
inline GmSmoothResult gm_smooth(const std::vector<GaussianBelief>& incoming,
                                const GmChainParams& params) {
  params.validate();
  const std::size_t M = incoming.size();
  for (const auto& b : incoming)
    if (!(b.var > 0.0) || std::isnan(b.mean))
      throw ParameterError("gm_smooth: incoming variances must be positive");

  const double a = 1.0 - params.eta;
  const double c = params.eta * params.kappa;
  const double q = params.eta * (2.0 - params.eta) * params.sigma2;

  GmSmoothResult out;
  out.extrinsic.resize(M);
  out.posterior.resize(M);
  out.lag_cov.assign(M > 0 ? M - 1 : 0, 0.0);
  if (M == 0) return out;

  // Forward: predicted (pm, pv) before incoming m, filtered (fm, fv) after.
  std::vector<double> pm(M), pv(M), fm(M), fv(M);
  pm[0] = params.kappa;
  pv[0] = params.sigma2;
  for (std::size_t m = 0; m < M; ++m) {
    const double lam_in = 1.0 / incoming[m].var;
    const double prec = 1.0 / pv[m] + lam_in;
    fv[m] = 1.0 / prec;
    fm[m] = fv[m] * (pm[m] / pv[m] + incoming[m].mean * lam_in);
    if (m + 1 < M) {
      pm[m + 1] = a * fm[m] + c;
      pv[m + 1] = a * a * fv[m] + q;
    }
  }

  // Backward: beta_m(e) ~ exp(-lam e^2/2 + h e) summarizes incoming m+1..M.
  std::vector<double> blam(M, 0.0), bh(M, 0.0);
  for (std::size_t m = M - 1; m-- > 0;) {
    const double lam_in = 1.0 / incoming[m + 1].var;
    const double lam1 = blam[m + 1] + lam_in;
    const double h1 = bh[m + 1] + incoming[m + 1].mean * lam_in;
    // Through the transition noise, then the affine map e_{m+1} = a e_m + c.
    const double shrink = 1.0 / (1.0 + q * lam1);
    const double lamx = lam1 * shrink;
    const double hx = h1 * shrink;
    blam[m] = a * a * lamx;
    bh[m] = a * (hx - lamx * c);
  }

  for (std::size_t m = 0; m < M; ++m) {
    const double prec = 1.0 / pv[m] + blam[m];
    const double v = 1.0 / prec;
    out.extrinsic[m] = {v * (pm[m] / pv[m] + bh[m]), v};
    const double lam_in = 1.0 / incoming[m].var;
    const double pprec = prec + lam_in;
    const double pvv = 1.0 / pprec;
    out.posterior[m] = {pvv * (out.extrinsic[m].mean * prec + incoming[m].mean * lam_in), pvv};
  }
  for (std::size_t m = 0; m + 1 < M; ++m) {
    const double gain = fv[m] * a / pv[m + 1];
    out.lag_cov[m] = gain * out.posterior[m + 1].var;
  }
  return out;
}

// Posterior sufficient statistics of one chain.
struct GmStats {
  std::vector<double> mean;    // E[e_m]
  std::vector<double> second;  // E[e_m^2]
  std::vector<double> lag;     // E[e_m e_{m+1}], length M-1
};

inline GmStats gm_stats(const GmSmoothResult& r) {
  GmStats s;
  const std::size_t M = r.posterior.size();
  s.mean.resize(M);
  s.second.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    s.mean[m] = r.posterior[m].mean;
    s.second[m] = r.posterior[m].var + r.posterior[m].mean * r.posterior[m].mean;
  }
  s.lag.resize(M ? M - 1 : 0);
  for (std::size_t m = 0; m + 1 < M; ++m) s.lag[m] = r.lag_moment(m);
  return s;
}

namespace detail {

// Chain statistics recentred at `shift` and reduced to the handful of sums
// the expected complete-data log-likelihood depends on.
struct GmSums {
  double K = 0.0;        // M - 1
  double m1 = 0.0;       // E[u_1]
  double s1 = 0.0;       // E[u_1^2]
  double a1 = 0.0;       // sum_{m>=2} E[u_m]
  double b1 = 0.0;       // sum_{m>=2} E[u_{m-1}]
  double a2 = 0.0;       // sum_{m>=2} E[u_m^2]
  double b2 = 0.0;       // sum_{m>=2} E[u_{m-1}^2]
  double cross = 0.0;    // sum_{m>=2} E[u_m u_{m-1}]
  double shift = 0.0;

  explicit GmSums(const GmStats& st) {
    const std::size_t M = st.mean.size();
    for (double v : st.mean) shift += v;
    shift /= static_cast<double>(M);
    auto mu = [&](std::size_t m) { return st.mean[m] - shift; };
    auto sq = [&](std::size_t m) {
      return st.second[m] - 2.0 * shift * st.mean[m] + shift * shift;
    };
    K = static_cast<double>(M - 1);
    m1 = mu(0);
    s1 = sq(0);
    for (std::size_t m = 1; m < M; ++m) {
      a1 += mu(m);
      b1 += mu(m - 1);
      a2 += sq(m);
      b2 += sq(m - 1);
      cross += st.lag[m - 1] - shift * (st.mean[m] + st.mean[m - 1]) + shift * shift;
    }
  }

  // Shifted kappa maximizing Q for fixed eta.
  double kappa(double eta) const {
    const double a = 1.0 - eta;
    return (m1 + (a1 - a * b1) / (2.0 - eta)) / (1.0 + K * eta / (2.0 - eta));
  }
  double r1(double k) const { return s1 - 2.0 * k * m1 + k * k; }
  // Sum over m >= 2 of E[(u_m - a u_{m-1})^2] with u = e - k.
  double w(double eta, double k) const {
    const double a = 1.0 - eta;
    const double suu = a2 - 2.0 * k * a1 + K * k * k;
    const double sww = b2 - 2.0 * k * b1 + K * k * k;
    const double suw = cross - k * (a1 + b1) + K * k * k;
    return suu - 2.0 * a * suw + a * a * sww;
  }
  double dw(double eta, double k) const {
    const double a = 1.0 - eta;
    const double sww = b2 - 2.0 * k * b1 + K * k * k;
    const double suw = cross - k * (a1 + b1) + K * k * k;
    return 2.0 * suw - 2.0 * a * sww;
  }
  double sigma2(double eta, double k) const {
    const double g = eta * (2.0 - eta);
    const double tail = K > 0 ? w(eta, k) / g : 0.0;
    return (r1(k) + tail) / (K + 1.0);
  }
  // Q up to additive constants; k is shifted.
  double q(double k, double s2, double eta) const {
    const double g = eta * (2.0 - eta);
    double val = -0.5 * (K + 1.0) * std::log(s2) - r1(k) / (2.0 * s2);
    if (K > 0) val += -0.5 * K * std::log(g) - w(eta, k) / (2.0 * g * s2);
    return val;
  }
  // d/d eta of the profile objective (envelope theorem).
  double dq_profile(double eta) const {
    const double k = kappa(eta);
    const double s2 = std::max(sigma2(eta, k), kGmSigma2Floor);
    const double g = eta * (2.0 - eta);
    const double dg = 2.0 * (1.0 - eta);
    return -0.5 * K * dg / g - (dw(eta, k) * g - w(eta, k) * dg) / (2.0 * g * g * s2);
  }
};

}  // namespace detail

// Expected complete-data log-likelihood E[ln p(e; params)] up to constants.
inline double gm_expected_loglik(const GmStats& st, const GmChainParams& p) {
  const detail::GmSums sums(st);
  return sums.q(p.kappa - sums.shift, p.sigma2, p.eta);
}

// M-step: for each eta, kappa and sigma2 have closed forms; eta maximizes the
// resulting profile over [kGmEtaMin, 1] by root-finding its derivative.
inline GmChainParams em_update_gm(const GmStats& st, const GmChainParams& old,
                                  bool learn_eta = true) {
  const std::size_t M = st.mean.size();
  if (M == 0) return old;
  const detail::GmSums sums(st);

  double spread = 0.0;
  for (std::size_t m = 0; m < M; ++m)
    spread = std::max(spread, std::abs(st.mean[m] - sums.shift) +
                                  std::abs(st.second[m] - st.mean[m] * st.mean[m]));
  if (spread < 1e-14) return {sums.shift, kGmSigma2Floor, old.eta};

  GmChainParams best = old;
  double best_q = -std::numeric_limits<double>::infinity();
  if (old.sigma2 > 0.0 && old.eta > 0.0)
    best_q = sums.q(old.kappa - sums.shift, old.sigma2, std::max(old.eta, kGmEtaMin));

  auto consider = [&](double eta) {
    const double k = sums.kappa(eta);
    const double s2 = std::max(sums.sigma2(eta, k), kGmSigma2Floor);
    const double val = sums.q(k, s2, eta);
    if (val > best_q) {
      best_q = val;
      best = {k + sums.shift, s2, eta};
    }
  };

  if (M == 1 || !learn_eta) {
    consider(std::max(old.eta, kGmEtaMin));
    return best;
  }

  constexpr int kGrid = 240;
  const double lo = std::log(kGmEtaMin);
  std::vector<double> grid(kGrid);
  for (int i = 0; i < kGrid; ++i)
    grid[i] = std::exp(lo * (1.0 - static_cast<double>(i) / (kGrid - 1)));
  grid.back() = 1.0;
  consider(grid.front());
  consider(1.0);
  double prev_eta = grid[0];
  double prev_d = sums.dq_profile(prev_eta);
  for (int i = 1; i < kGrid; ++i) {
    const double eta = grid[i];
    const double d = sums.dq_profile(eta);
    if (prev_d > 0.0 && d <= 0.0) {
      auto f = [&](double e) { return sums.dq_profile(e); };
      boost::uintmax_t iters = 200;
      const auto bracket = boost::math::tools::toms748_solve(
          f, prev_eta, eta, prev_d, d, boost::math::tools::eps_tolerance<double>(50),
          iters);
      consider(0.5 * (bracket.first + bracket.second));
    }
    prev_eta = eta;
    prev_d = d;
  }
  return best;
}

inline GmChainParams em_update_gm(const GmSmoothResult& r, const GmChainParams& old,
                                  bool learn_eta = true) {
  return em_update_gm(gm_stats(r), old, learn_eta);
}

}  // namespace hutamp
