#pragma once

// HUT-AMP: turbo alternation between the bilinear (BiG-AMP) subgraph, the N
// spectral Gauss-Markov chains and the N spatial Ising fields, with one EM
// update of all model parameters per turbo iteration.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hutamp/baselines.hpp"
#include "hutamp/bigamp.hpp"
#include "hutamp/core_data.hpp"
#include "hutamp/gauss_markov.hpp"
#include "hutamp/ising_mrf.hpp"
#include "hutamp/nngm_em.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

struct ModelParams {
  Vector psi;                      // M noise variances
  std::vector<NngmParams> nngm;    // per material
  std::vector<GmChainParams> gm;   // per material
  std::vector<MrfParams> mrf;      // per material

  void validate() const {
    for (Index m = 0; m < psi.size(); ++m)
      if (!(psi[m] > 0.0) || !std::isfinite(psi[m]))
        throw ParameterError("omega: psi must be positive and finite");
    if (nngm.size() != gm.size() || gm.size() != mrf.size())
      throw ShapeError("omega: per-material parameter counts differ");
    for (const auto& p : nngm) p.validate();
    for (const auto& p : gm) p.validate();
    for (const auto& p : mrf) p.validate();
  }
};

struct TurboOptions {
  int max_turbo = 20;
  double turbo_tol = 1e-6;
  int L = 3;
  double snr0_db = 10.0;
  bool spectral_coherence = true;  // off: eta frozen at 1
  bool spatial_coherence = true;   // off: beta frozen at 0, alpha still learned
  bool learn_em = true;
  bool scalar_psi = false;
  double alpha0 = 0.4;
  double beta0 = 0.4;
  BigAmpOptions bigamp;
  MrfOptions mrf;
  MrfEmOptions mrf_em;
  // Skips FSNMF when set: raw-scale M x N initial endmembers.
  std::optional<Matrix> init_endmembers;
};

struct IterationLog {
  int iteration = 0;
  double residual = 0.0;
  int bigamp_iterations = 0;
  BigAmpStatus bigamp_status = BigAmpStatus::kMaxIters;
  ModelParams omega;
};

// Inter-subgraph messages and current estimates. Spectral messages cover
// the M Gaussian rows only; the augmentation row of Sbar is always Dirac(1).
struct TurboState {
  GridShape grid;
  Index M = 0, N = 0, T = 0;
  AugmentedObs obs;   // ybar = [Ytilde; 1'], mu, psi
  ModelParams omega;

  Matrix s_to_f_mean, s_to_f_var;  // BiG-AMP -> copy factors: (qhat, nuq), M x N
  Matrix f_to_s_mean, f_to_s_var;  // chains -> BiG-AMP prior on S, M x N
  Matrix e_post_mean, e_post_var;  // chain posteriors, M x N
  Matrix a_to_g_mean, a_to_g_var;  // BiG-AMP -> support factors: (rhat, nur), N x T
  Matrix g_to_d;                   // activity likelihood messages, N x T
  Matrix d_to_g;                   // MRF extrinsic activity priors pi, N x T
  Matrix d_post;                   // MRF posterior activity, N x T

  BigAmpOutput bigamp;  // last run: posteriors of Sbar, A, Z
  int iteration = 0;
  std::vector<double> residual_history;
  std::vector<IterationLog> log;
  bool diverged = false;
  std::vector<std::string> warnings;

  Matrix endmembers_mean_removed() const { return bigamp.shat_post.topRows(M); }
};

struct UnmixDiagnostics {
  std::vector<double> residual_history;
  int turbo_iterations = 0;
  double wall_time_s = 0.0;
  bool diverged = false;
  Index negative_endmember_entries = 0;
  std::vector<std::string> warnings;
  std::vector<IterationLog> log;
};

struct UnmixResult {
  Endmembers endmembers;   // M x N, mean restored
  Abundances abundances;   // N x T, columns on the simplex
  ModelParams omega;
  UnmixDiagnostics diagnostics;
};

namespace detail {

// Prior mean and variance of (1-pi) delta + pi * NNGM.
inline GaussianBelief spike_slab_prior_moments(double pi, const NngmParams& slab) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t l = 0; l < slab.components(); ++l) {
    const Moments mo = trunc_gauss_moments(slab.theta[l], slab.phi[l]);
    m1 += slab.omega[l] * mo.mean;
    m2 += slab.omega[l] * (mo.var + mo.mean * mo.mean);
  }
  const double mean = pi * m1;
  return {mean, std::max(0.0, pi * m2 - mean * mean)};
}

inline GaussianPriorField endmember_prior(const TurboState& st) {
  GaussianPriorField f;
  f.mean.resize(st.M + 1, st.N);
  f.var.resize(st.M + 1, st.N);
  f.mean.topRows(st.M) = st.f_to_s_mean;
  f.var.topRows(st.M) = st.f_to_s_var;
  f.mean.row(st.M).setOnes();
  f.var.row(st.M).setZero();
  return f;
}

inline SpikeSlabField abundance_prior(const TurboState& st) {
  return SpikeSlabField{st.d_to_g, st.omega.nngm};
}

inline void store_bigamp(TurboState& st, BigAmpOutput&& out) {
  st.bigamp = std::move(out);
  st.s_to_f_mean = st.bigamp.qhat.topRows(st.M);
  st.s_to_f_var = st.bigamp.nuq.topRows(st.M);
  st.a_to_g_mean = st.bigamp.rhat;
  st.a_to_g_var = st.bigamp.nur;
  if (st.bigamp.status == BigAmpStatus::kDiverged) st.diverged = true;
}

inline BigAmpInit warm_start(const TurboState& st) {
  return {st.bigamp.shat_post, st.bigamp.svar_post, st.bigamp.ahat_post,
          st.bigamp.avar_post, st.bigamp.s_msg};
}

// Correlation initialization from adjacent-band inner products. Each term is
// a lag-one correlation estimate and is capped at 1: bands whose energy barely
// clears the guessed noise floor would otherwise dominate the average.
inline double initial_eta(const Matrix& ytilde, const Vector& psi) {
  const Index M = ytilde.rows();
  const double T = static_cast<double>(ytilde.cols());
  if (M < 2) return 1.0;
  double acc = 0.0;
  for (Index m = 0; m + 1 < M; ++m) {
    const double denom = ytilde.row(m).squaredNorm() - T * psi[m];
    const double num = std::abs(ytilde.row(m).dot(ytilde.row(m + 1)));
    acc += denom > 0.0 ? std::min(1.0, num / denom) : 1.0;
  }
  return std::clamp(1.0 - acc / static_cast<double>(M - 1), kGmEtaMin, 1.0);
}

inline double initial_psi(double ytilde_sqnorm, Index M, Index T, double snr0_db) {
  const double snr0 = std::pow(10.0, snr0_db / 10.0);
  return ytilde_sqnorm / ((snr0 + 1.0) * static_cast<double>(M) * static_cast<double>(T));
}

}  // namespace detail

inline void validate_options(const TurboOptions& o) {
  if (o.max_turbo < 0) throw ParameterError("max_turbo must be >= 0");
  if (!(o.turbo_tol > 0.0)) throw ParameterError("turbo_tol must be > 0");
  if (o.L < 1) throw ParameterError("L must be >= 1");
  if (!std::isfinite(o.snr0_db)) throw ParameterError("snr0_db must be finite");
  if (!std::isfinite(o.alpha0) || !(o.beta0 >= 0.0))
    throw ParameterError("alpha0 must be finite and beta0 >= 0");
}

inline TurboState initialize(const HsiCube& cube, Index N, const TurboOptions& opts = {}) {
  validate_options(opts);
  if (N < 2) throw ParameterError("initialize: N must be >= 2");
  TurboState st;
  st.grid = cube.grid();
  st.M = cube.bands_count();
  st.T = cube.pixels();
  st.N = N;
  const Index M = st.M, T = st.T;
  if (N > std::min(M, T)) throw ParameterError("initialize: N exceeds min(M, T)");
  const MeanRemoved mr = mean_remove(cube);

  // (a) endmembers from FSNMF with subspace denoising, then mean removed.
  Matrix s0;
  if (opts.init_endmembers) {
    s0 = *opts.init_endmembers;
    if (s0.rows() != M || s0.cols() != N)
      throw ShapeError("initialize: init_endmembers must be M x N");
  } else {
    try {
      s0 = fsnmf_extract(cube.data(), N, true).s;
    } catch (const Error& e) {
      throw InitError(std::string("initialize: endmember extraction failed: ") + e.what());
    }
  }
  const Matrix s0_mr = s0.array() - mr.mu;

  // (d) noise variances from the assumed initial SNR.
  const double psi0 = detail::initial_psi(mr.ytilde.squaredNorm(), M, T, opts.snr0_db);
  if (!(psi0 > 0.0)) throw InitError("initialize: data are constant; cannot set noise level");
  st.obs = augment(mr.ytilde, Vector::Constant(M, psi0), mr.mu);
  st.omega.psi = st.obs.psi;

  // (c) abundance prior: uniform NNGM fit, pi = 1/2.
  const NngmParams uni = uniform_nngm_fit(opts.L);
  st.omega.nngm.assign(static_cast<std::size_t>(N), uni);
  st.d_to_g = Matrix::Constant(N, T, 0.5);
  st.d_post = st.d_to_g;
  st.g_to_d = st.d_to_g;

  // (b) Dirac endmember priors at the initial estimate.
  st.f_to_s_mean = s0_mr;
  st.f_to_s_var = Matrix::Zero(M, N);

  // (e) one BiG-AMP run under these priors.
  const GaussianBelief a0 = detail::spike_slab_prior_moments(0.5, uni);
  BigAmpInit init;
  init.shat.resize(M + 1, N);
  init.shat.topRows(M) = s0_mr;
  init.shat.row(M).setOnes();
  init.svar = Matrix::Zero(M + 1, N);
  init.ahat = Matrix::Constant(N, T, a0.mean);
  init.avar = Matrix::Constant(N, T, a0.var);
  detail::store_bigamp(st, run_bigamp(st.obs, detail::endmember_prior(st),
                                      detail::abundance_prior(st), init, opts.bigamp));

  // (f) chain parameters from the columns of the initial endmembers.
  const double eta0 =
      opts.spectral_coherence ? detail::initial_eta(mr.ytilde, st.omega.psi) : 1.0;
  for (Index n = 0; n < N; ++n) {
    const double kappa = s0_mr.col(n).mean();
    const double var = (s0_mr.col(n).array() - kappa).square().mean();
    st.omega.gm.push_back({kappa, std::max(var, kGmSigma2Floor), eta0});
  }
  // (g) support field parameters.
  st.omega.mrf.assign(static_cast<std::size_t>(N),
                      MrfParams{opts.alpha0, opts.spatial_coherence ? opts.beta0 : 0.0});
  st.omega.validate();
  st.residual_history.push_back(st.bigamp.final_residual);
  return st;
}

// One EM update of all parameters from the current messages.
inline ModelParams em_update_all(const TurboState& st,
                                 const std::vector<GmSmoothResult>& chains,
                                 const std::vector<MrfResult>& fields,
                                 const TurboOptions& opts) {
  ModelParams next = st.omega;
  const Index M = st.M, N = st.N, T = st.T;
  const Matrix ytilde = st.obs.ybar.topRows(M);

  // Noise from the output-channel posterior of the last BiG-AMP run.
  Vector psi = em_update_noise(ytilde, st.bigamp.zhat_post.topRows(M),
                               st.bigamp.zvar_post.topRows(M));
  if (opts.scalar_psi) psi.setConstant(psi.mean());
  next.psi = psi;

  for (Index n = 0; n < N; ++n) {
    const auto nn = static_cast<std::size_t>(n);
    // Slab under the new activity priors and the old slab parameters.
    NngmAccumulator acc(st.omega.nngm[nn].components());
    for (Index t = 0; t < T; ++t)
      acc.add({st.d_to_g(n, t), st.omega.nngm[nn]}, st.a_to_g_mean(n, t),
              st.a_to_g_var(n, t));
    next.nngm[nn] = nngm_m_step(acc, st.omega.nngm[nn]).params;

    next.gm[nn] = em_update_gm(chains[nn], st.omega.gm[nn], opts.spectral_coherence);
    if (!opts.spectral_coherence) next.gm[nn].eta = 1.0;

    next.mrf[nn] = em_update_mrf(st.grid, fields[nn], st.omega.mrf[nn], opts.mrf_em,
                                 opts.spatial_coherence);
    if (!opts.spatial_coherence) next.mrf[nn].beta = 0.0;
  }
  next.validate();
  return next;
}

inline void turbo_iterate(TurboState& st, const TurboOptions& opts = {}) {
  const Index M = st.M, N = st.N, T = st.T;
  const int iter = st.iteration + 1;
  try {
    // Spectral side: copy-factor messages into the chains and back.
    std::vector<GmSmoothResult> chains(static_cast<std::size_t>(N));
    st.f_to_s_mean.resize(M, N);
    st.f_to_s_var.resize(M, N);
    st.e_post_mean.resize(M, N);
    st.e_post_var.resize(M, N);
    for (Index n = 0; n < N; ++n) {
      std::vector<GaussianBelief> incoming(static_cast<std::size_t>(M));
      for (Index m = 0; m < M; ++m)
        incoming[m] = {st.s_to_f_mean(m, n), st.s_to_f_var(m, n)};
      auto& ch = chains[static_cast<std::size_t>(n)];
      ch = gm_smooth(incoming, st.omega.gm[static_cast<std::size_t>(n)]);
      for (Index m = 0; m < M; ++m) {
        st.f_to_s_mean(m, n) = ch.extrinsic[m].mean;
        st.f_to_s_var(m, n) = ch.extrinsic[m].var;
        st.e_post_mean(m, n) = ch.posterior[m].mean;
        st.e_post_var(m, n) = ch.posterior[m].var;
      }
    }

    // Spatial side: activity likelihoods into the fields and back.
    std::vector<MrfResult> fields(static_cast<std::size_t>(N));
    st.g_to_d.resize(N, T);
    for (Index n = 0; n < N; ++n) {
      const auto& slab = st.omega.nngm[static_cast<std::size_t>(n)];
      for (Index t = 0; t < T; ++t)
        st.g_to_d(n, t) =
            gtod_message(0.5, slab, st.a_to_g_mean(n, t), st.a_to_g_var(n, t)).p_active;
      auto& f = fields[static_cast<std::size_t>(n)];
      f = mrf_bp(st.g_to_d.row(n).transpose(), st.grid,
                 st.omega.mrf[static_cast<std::size_t>(n)], opts.mrf);
      st.d_to_g.row(n) = f.extrinsic.transpose();
      st.d_post.row(n) = f.posterior.transpose();
    }

    if (opts.learn_em) {
      st.omega = em_update_all(st, chains, fields, opts);
      st.obs.psi = st.omega.psi;
    }

    detail::store_bigamp(st, run_bigamp(st.obs, detail::endmember_prior(st),
                                        detail::abundance_prior(st), detail::warm_start(st),
                                        opts.bigamp));
  } catch (const Error& e) {
    throw NumericError("turbo iteration " + std::to_string(iter) + ": " + e.what());
  }
  st.iteration = iter;
  st.residual_history.push_back(st.bigamp.final_residual);
  st.log.push_back({iter, st.bigamp.final_residual, st.bigamp.iterations_run,
                    st.bigamp.status, st.omega});
}

namespace detail {

inline UnmixResult finalize(const TurboState& st, double seconds) {
  UnmixResult r;
  r.endmembers.s = st.endmembers_mean_removed().array() + st.obs.mu;
  r.abundances.a = project_simplex_columns(st.bigamp.ahat_post);
  r.omega = st.omega;
  auto& d = r.diagnostics;
  d.residual_history = st.residual_history;
  d.turbo_iterations = st.iteration;
  d.wall_time_s = seconds;
  d.diverged = st.diverged;
  d.warnings = st.warnings;
  d.log = st.log;
  d.negative_endmember_entries = (r.endmembers.s.array() < 0.0).count();
  if (d.negative_endmember_entries > 0)
    d.warnings.push_back("negative entries in estimated endmembers: " +
                         std::to_string(d.negative_endmember_entries));
  return r;
}

}  // namespace detail

inline UnmixResult unmix(const HsiCube& cube, Index N, const TurboOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  if (N < 1) throw ParameterError("unmix: N must be >= 1");
  if (N == 1) {
    // The simplex forces a_1t = 1; the endmember is the mean spectrum.
    UnmixResult r;
    r.endmembers.s = cube.data().rowwise().mean();
    r.abundances.a = Matrix::Ones(1, cube.pixels());
    r.diagnostics.residual_history.push_back(
        (cube.data() - r.endmembers.s * r.abundances.a).norm());
    r.diagnostics.wall_time_s = elapsed();
    return r;
  }

  TurboState st = initialize(cube, N, opts);
  Matrix z_old = st.bigamp.shat_post * st.bigamp.ahat_post;
  // Estimates of the lowest-residual iterate, restored on divergence.
  BigAmpOutput best = st.bigamp;
  ModelParams best_omega = st.omega;
  for (int i = 0; i < opts.max_turbo; ++i) {
    turbo_iterate(st, opts);
    const Matrix z = st.bigamp.shat_post * st.bigamp.ahat_post;
    const double change = (z - z_old).norm() / std::max(z.norm(), 1e-300);
    z_old = z;
    if (st.diverged) {
      st.warnings.push_back("BiG-AMP diverged at turbo iteration " +
                            std::to_string(st.iteration) + "; returning best-residual iterate");
      st.bigamp = std::move(best);
      st.omega = std::move(best_omega);
      break;
    }
    if (st.bigamp.final_residual <= best.final_residual) {
      best = st.bigamp;
      best_omega = st.omega;
    }
    if (change < opts.turbo_tol) break;
  }
  return detail::finalize(st, elapsed());
}

}  // namespace hutamp
