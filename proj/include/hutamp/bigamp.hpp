#pragma once

// Bilinear GAMP on the augmented model Ybar ~ Sbar * A, Sbar (M+1) x N,
// A N x T. Rows 1..M of Ybar see AWGN with per-row variance psi_m; row M+1
// is observed exactly (Dirac likelihood). The schedule is the damped
// BiG-AMP recursion with the Gaussian-output simplification for the noisy
// rows.
//
// Priors enter through denoiser objects exposing
//   void denoise(const Matrix& hat, const Matrix& nu, Matrix& mean, Matrix& var) const;
// which map pseudo-measurements (hat, nu) to posterior means and variances.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hutamp/core_data.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

// Independent Gaussian prior per element; var == 0 marks a Dirac prior,
// which passes its value through unchanged with zero variance.
struct GaussianPriorField {
  Matrix mean;
  Matrix var;

  void denoise(const Matrix& hat, const Matrix& nu, Matrix& out_mean,
               Matrix& out_var) const {
    out_mean.resize(mean.rows(), mean.cols());
    out_var.resize(mean.rows(), mean.cols());
    for (Index c = 0; c < mean.cols(); ++c)
      for (Index r = 0; r < mean.rows(); ++r) {
        const double v0 = var(r, c);
        if (v0 <= 0.0) {
          out_mean(r, c) = mean(r, c);
          out_var(r, c) = 0.0;
          continue;
        }
        const double v = 1.0 / (1.0 / v0 + 1.0 / nu(r, c));
        out_mean(r, c) = v * (mean(r, c) / v0 + hat(r, c) / nu(r, c));
        out_var(r, c) = v;
      }
  }
};

// Bernoulli-NNGM prior per element: activity probability pi(n, t) and the
// slab shared along row n.
struct SpikeSlabField {
  Matrix pi;
  std::vector<NngmParams> slab;

  void denoise(const Matrix& hat, const Matrix& nu, Matrix& out_mean,
               Matrix& out_var) const {
    out_mean.resize(pi.rows(), pi.cols());
    out_var.resize(pi.rows(), pi.cols());
    for (Index t = 0; t < pi.cols(); ++t)
      for (Index n = 0; n < pi.rows(); ++n) {
        const SpikeSlabPosterior p = spike_slab_posterior(
            {pi(n, t), slab[static_cast<std::size_t>(n)]}, hat(n, t), nu(n, t));
        out_mean(n, t) = p.mean;
        out_var(n, t) = p.var;
      }
  }
};

// Output-channel posterior of one z under N(z; phat, nup).
inline GaussianBelief likelihood_moments(double y, RowKind kind, double psi,
                                         double phat, double nup) {
  if (!(nup > 0.0)) throw ParameterError("likelihood_moments: nup must be positive");
  if (kind == RowKind::kDirac) return {y, 0.0};
  if (!(psi > 0.0)) throw ParameterError("likelihood_moments: psi must be positive");
  if (std::isinf(psi)) return {phat, nup};
  const double v = psi * nup / (psi + nup);
  return {(psi * phat + nup * y) / (psi + nup), v};
}

struct BigAmpOptions {
  int max_iters = 200;
  double damping = 0.3;      // initial step
  bool adaptive = true;      // halve on residual increase, x1.1 on decrease
  double damping_min = 0.05;
  double damping_max = 1.0;
  double tol = 1e-8;         // relative change of the plug-in S*A
  double var_floor = 1e-13;
  double var_ceiling = 1e10;
};

struct BigAmpInit {
  Matrix shat, svar;  // (M+1) x N
  Matrix ahat, avar;  // N x T
  Matrix s_msg;       // optional (M+1) x T warm start for the residual message
};

enum class BigAmpStatus { kConverged, kMaxIters, kDiverged };

inline const char* to_string(BigAmpStatus s) {
  switch (s) {
    case BigAmpStatus::kConverged: return "converged";
    case BigAmpStatus::kMaxIters: return "max_iters";
    case BigAmpStatus::kDiverged: return "diverged";
  }
  return "unknown";
}

struct BigAmpOutput {
  Matrix qhat, nuq;              // (M+1) x N
  Matrix rhat, nur;              // N x T
  Matrix shat_post, svar_post;   // (M+1) x N
  Matrix ahat_post, avar_post;   // N x T
  Matrix zhat_post, zvar_post;   // (M+1) x T
  Matrix s_msg;                  // residual message, for warm starts
  int iterations_run = 0;
  double final_residual = 0.0;
  BigAmpStatus status = BigAmpStatus::kMaxIters;
  std::vector<double> residual_history;
};

namespace detail {

inline double gaussian_rows_residual(const Matrix& ybar, const Matrix& s,
                                     const Matrix& a) {
  const Index M = ybar.rows() - 1;
  return (ybar.topRows(M) - s.topRows(M) * a).norm();
}

inline void check_finite(const Matrix& m, const char* what, int iter) {
  if (!m.allFinite())
    throw NumericError(std::string("bigamp: non-finite ") + what + " at iteration " +
                       std::to_string(iter));
}

}  // namespace detail

template <class SPrior, class APrior>
BigAmpOutput run_bigamp(const AugmentedObs& obs, const SPrior& prior_s,
                        const APrior& prior_a, const BigAmpInit& init,
                        const BigAmpOptions& opts = {}) {
  const Matrix& Y = obs.ybar;
  const Index M1 = Y.rows();
  const Index M = M1 - 1;
  const Index T = Y.cols();
  const Index N = init.shat.cols();
  if (init.shat.rows() != M1 || init.svar.rows() != M1 || init.svar.cols() != N ||
      init.ahat.rows() != N || init.ahat.cols() != T || init.avar.rows() != N ||
      init.avar.cols() != T)
    throw ShapeError("run_bigamp: init shapes inconsistent with ybar and N");
  if (obs.psi.size() != M) throw ShapeError("run_bigamp: psi length != M");
  if (opts.max_iters < 0 || !(opts.damping > 0.0) || opts.damping > 1.0 ||
      !(opts.tol > 0.0) || !(opts.var_floor > 0.0))
    throw ParameterError("run_bigamp: invalid options");

  BigAmpOutput out;
  Matrix sh = init.shat, sv = init.svar, ah = init.ahat, av = init.avar;
  Matrix s_msg = init.s_msg.size() ? init.s_msg : Matrix::Zero(M1, T);
  if (s_msg.rows() != M1 || s_msg.cols() != T)
    throw ShapeError("run_bigamp: s_msg warm start has the wrong shape");

  auto fill_output_channel = [&](const Matrix& phat, const Matrix& nup) {
    out.zhat_post.resize(M1, T);
    out.zvar_post.resize(M1, T);
    for (Index t = 0; t < T; ++t) {
      for (Index m = 0; m < M; ++m) {
        const double psi = obs.psi[m];
        const double v = nup(m, t);
        out.zhat_post(m, t) = (psi * phat(m, t) + v * Y(m, t)) / (psi + v);
        out.zvar_post(m, t) = psi * v / (psi + v);
      }
      out.zhat_post(M, t) = Y(M, t);
      out.zvar_post(M, t) = 0.0;
    }
  };

  if (opts.max_iters == 0) {
    out.shat_post = sh;
    out.svar_post = sv;
    out.ahat_post = ah;
    out.avar_post = av;
    out.qhat = sh;
    out.nuq = Matrix::Constant(M1, N, opts.var_ceiling);
    out.rhat = ah;
    out.nur = Matrix::Constant(N, T, opts.var_ceiling);
    out.zhat_post = sh * ah;
    out.zvar_post = (sh.cwiseAbs2() * av + sv * ah.cwiseAbs2() + sv * av);
    out.s_msg = s_msg;
    out.final_residual = detail::gaussian_rows_residual(Y, sh, ah);
    out.status = BigAmpStatus::kMaxIters;
    return out;
  }

  Matrix sbar = sh, abar = ah;
  Matrix nup_bar_old, nup_old, s_msg_old = s_msg, nus_old;
  Matrix nupbar, pbar, nup, phat, nus(M1, T), s_new(M1, T);
  Matrix nur, rhat, nuq, qhat;
  Matrix z_old = sh * ah;
  double step = opts.damping;
  double prev_residual = std::numeric_limits<double>::infinity();
  double best_residual = std::numeric_limits<double>::infinity();
  std::optional<BigAmpOutput> best;
  std::vector<double> floor_residuals;  // residuals since the step hit its floor

  for (int it = 1; it <= opts.max_iters; ++it) {
    const bool first = it == 1;
    const double beta = first ? 1.0 : step;

    // Plug-in product and its variance.
    const Matrix sh2 = sh.cwiseAbs2();
    const Matrix ah2 = ah.cwiseAbs2();
    nupbar = sh2 * av + sv * ah2;
    pbar = sh * ah;
    nup = nupbar + sv * av;
    if (!first) {
      nupbar = beta * nupbar + (1.0 - beta) * nup_bar_old;
      nup = beta * nup + (1.0 - beta) * nup_old;
    }
    nupbar = nupbar.cwiseMax(0.0);
    nup = nup.cwiseMax(opts.var_floor);
    phat = pbar - s_msg.cwiseProduct(nupbar);

    // Output channel: Gaussian rows 0..M-1, exact row M.
    for (Index t = 0; t < T; ++t) {
      for (Index m = 0; m < M; ++m) {
        const double d = nup(m, t) + obs.psi[m];
        s_new(m, t) = (Y(m, t) - phat(m, t)) / d;
        nus(m, t) = 1.0 / d;
      }
      s_new(M, t) = (Y(M, t) - phat(M, t)) / nup(M, t);
      nus(M, t) = 1.0 / nup(M, t);
    }
    if (!first) {
      s_new = beta * s_new + (1.0 - beta) * s_msg_old;
      nus = beta * nus + (1.0 - beta) * nus_old;
    }
    detail::check_finite(s_new, "residual message", it);

    if (first) {
      sbar = sh;
      abar = ah;
    } else {
      sbar = beta * sh + (1.0 - beta) * sbar;
      abar = beta * ah + (1.0 - beta) * abar;
    }

    // Pseudo-measurements of A.
    nur = (sbar.cwiseAbs2().transpose() * nus).cwiseInverse();
    nur = nur.cwiseMax(opts.var_floor).cwiseMin(opts.var_ceiling);
    const Matrix rgain =
        (Matrix::Ones(N, T) - nur.cwiseProduct(sv.transpose() * nus)).cwiseMax(0.0).cwiseMin(1.0);
    rhat = abar.cwiseProduct(rgain) + nur.cwiseProduct(sbar.transpose() * s_new);

    // Pseudo-measurements of Sbar.
    nuq = (nus * abar.cwiseAbs2().transpose()).cwiseInverse();
    nuq = nuq.cwiseMax(opts.var_floor).cwiseMin(opts.var_ceiling);
    const Matrix qgain =
        (Matrix::Ones(M1, N) - nuq.cwiseProduct(nus * av.transpose())).cwiseMax(0.0).cwiseMin(1.0);
    qhat = sbar.cwiseProduct(qgain) + nuq.cwiseProduct(s_new * abar.transpose());
    detail::check_finite(rhat, "rhat", it);
    detail::check_finite(qhat, "qhat", it);

    nup_bar_old = nupbar;
    nup_old = nup;
    s_msg_old = s_new;
    nus_old = nus;
    s_msg = s_new;

    prior_a.denoise(rhat, nur, ah, av);
    prior_s.denoise(qhat, nuq, sh, sv);
    av = av.cwiseMax(0.0);
    sv = sv.cwiseMax(0.0);
    detail::check_finite(ah, "abundance estimate", it);
    detail::check_finite(sh, "endmember estimate", it);

    const Matrix z = sh * ah;
    const double residual = detail::gaussian_rows_residual(Y, sh, ah);
    out.residual_history.push_back(residual);
    const double zn = z.norm();
    const double change = (z - z_old).norm() / std::max(zn, 1e-300);
    z_old = z;
    out.iterations_run = it;

    auto snapshot = [&]() {
      out.qhat = qhat;
      out.nuq = nuq;
      out.rhat = rhat;
      out.nur = nur;
      out.shat_post = sh;
      out.svar_post = sv;
      out.ahat_post = ah;
      out.avar_post = av;
      out.s_msg = s_msg;
      out.final_residual = residual;
      fill_output_channel(phat, nup);
    };

    if (residual < best_residual) {
      best_residual = residual;
      snapshot();
      best = out;
    }

    if (change < opts.tol) {
      snapshot();
      out.status = BigAmpStatus::kConverged;
      return out;
    }

    if (opts.adaptive && !first) {
      if (residual > prev_residual)
        step = std::max(opts.damping_min, 0.5 * step);
      else
        step = std::min(opts.damping_max, 1.1 * step);
    }
    prev_residual = residual;

    if (step <= opts.damping_min) {
      floor_residuals.push_back(residual);
      const std::size_t k = floor_residuals.size();
      if (k > 20 && residual > 10.0 * floor_residuals[k - 21]) {
        BigAmpOutput b = *best;
        b.status = BigAmpStatus::kDiverged;
        b.iterations_run = it;
        b.residual_history = out.residual_history;
        return b;
      }
    } else {
      floor_residuals.clear();
    }

    if (it == opts.max_iters) {
      snapshot();
      out.status = BigAmpStatus::kMaxIters;
    }
  }
  return out;
}

}  // namespace hutamp
