#pragma once

// Adaptive-quadrature reference values for the scalar denoisers. Everything
// here integrates the defining densities directly; nothing is shared with the
// closed forms under test.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

inline double log_gauss(double x, double m, double v) {
  return -0.5 * std::log(2.0 * M_PI * v) - 0.5 * (x - m) * (x - m) / v;
}

// Integrate f over [0, hi] split at geometric breakpoints of `scale` so narrow
// features near the origin are resolved. Past `mode` the integrand decays at
// least exponentially, so the sweep stops once a segment adds nothing; far
// segments would otherwise recurse to full depth on underflowed values.
// Exponents reach ~1e4 in magnitude, so the integrand carries ~1e-12 relative
// rounding noise and the tolerance must sit above that.
inline double integrate_half_line(const std::function<double(double)>& f,
                                  double scale, double hi, double mode) {
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  double a = 0.0;
  double b = std::min(scale, hi);
  while (a < hi) {
    // Mapped to [0, 1]: this Boost version tests the error of the unit-interval
    // rule against the width-scaled estimate, so short segments never converge.
    const double w = b - a;
    const double piece =
        w * gauss_kronrod<double, 61>::integrate([&](double u) { return f(a + w * u); }, 0.0,
                                                 1.0, 12, 1e-10);
    total += piece;
    if (a > mode && std::abs(piece) <= 1e-17 * std::abs(total)) break;
    a = b;
    b = std::min(hi, b == 0.0 ? scale : 2.0 * b);
  }
  return total;
}

// Log-concave integrand exp(g(x)) on x >= 0, where g is a sum of Gaussian
// log-densities with combined precision `prec` and unconstrained maximizer
// `xstar`. Moments are returned about the origin and about the mean.
struct HalfLineStats {
  double log_mass = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

inline HalfLineStats half_line_stats(const std::function<double(double)>& g,
                                     double xstar, double prec) {
  const double v = 1.0 / prec;
  const double sd = std::sqrt(v);
  const double xmax = std::max(0.0, xstar);
  const double gmax = g(xmax);
  double scale = sd;
  if (xstar < 0.0) scale = std::min(sd, v / std::abs(xstar));
  const double hi = xmax + 60.0 * sd + 60.0 * scale;
  auto f0 = [&](double x) { return std::exp(g(x) - gmax); };
  const double i0 = integrate_half_line(f0, scale, hi, xmax + 2.0 * sd);
  auto f1 = [&](double x) { return x * std::exp(g(x) - gmax); };
  const double mean = integrate_half_line(f1, scale, hi, xmax + 2.0 * sd) / i0;
  auto f2 = [&](double x) {
    const double d = x - mean;
    return d * d * std::exp(g(x) - gmax);
  };
  const double var = integrate_half_line(f2, scale, hi, xmax + 2.0 * sd) / i0;
  return {gmax + std::log(i0), mean, var};
}

// Moments of N_+(theta, phi) and log of its normalizer.
inline HalfLineStats trunc_gauss(double theta, double phi) {
  auto g = [=](double x) { return log_gauss(x, theta, phi); };
  return half_line_stats(g, theta, 1.0 / phi);
}

// Posterior under N_+(theta, phi) prior and N(rhat; x, nu) likelihood;
// log_mass is the log evidence.
inline HalfLineStats trunc_posterior(double theta, double phi, double rhat,
                                     double nu) {
  const double log_norm = trunc_gauss(theta, phi).log_mass;
  auto g = [=](double x) {
    return log_gauss(x, theta, phi) - log_norm + log_gauss(x, rhat, nu);
  };
  const double prec = 1.0 / phi + 1.0 / nu;
  const double xstar = (theta / phi + rhat / nu) / prec;
  return half_line_stats(g, xstar, prec);
}

struct SpikeSlabRef {
  double post_pi;
  double mean;
  double var;
  double llr_active;
};

// Bernoulli-NNGM prior (1-pi) delta + pi sum_l w_l N_+(theta_l, phi_l).
inline SpikeSlabRef spike_slab(double pi, const std::vector<double>& w,
                               const std::vector<double>& theta,
                               const std::vector<double>& phi, double rhat,
                               double nu) {
  // Per-component mass, first and second raw moments, in log-safe form.
  std::vector<double> logm(w.size()), m1(w.size()), m2(w.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < w.size(); ++l) {
    const HalfLineStats s = trunc_posterior(theta[l], phi[l], rhat, nu);
    logm[l] = std::log(w[l]) + s.log_mass;
    m1[l] = s.mean;
    m2[l] = s.var + s.mean * s.mean;
    best = std::max(best, logm[l]);
  }
  double mass = 0.0, e1 = 0.0, e2 = 0.0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    const double r = std::exp(logm[l] - best);
    mass += r;
    e1 += r * m1[l];
    e2 += r * m2[l];
  }
  e1 /= mass;
  e2 /= mass;
  const double log_active = best + std::log(mass);
  const double log_inactive = log_gauss(0.0, rhat, nu);
  SpikeSlabRef out;
  out.llr_active = log_active - log_inactive;
  const double lo = std::log(pi) + log_active;
  const double li = std::log1p(-pi) + log_inactive;
  const double mx = std::max(lo, li);
  out.post_pi = std::exp(lo - mx) / (std::exp(lo - mx) + std::exp(li - mx));
  out.mean = out.post_pi * e1;
  const double second = out.post_pi * e2;
  out.var = second - out.mean * out.mean;
  return out;
}

}  // namespace oracle
