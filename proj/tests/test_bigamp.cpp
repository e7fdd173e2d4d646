#include <catch2/catch_amalgamated.hpp>

#include <limits>
#include <random>

#include "hutamp/bigamp.hpp"
#include "hutamp/metrics.hpp"

using namespace hutamp;

namespace {

// Observations with an exact last row equal to the column sums of A, so the
// augmented factor is [S; 1'] whatever A is.
AugmentedObs exact_obs(const Matrix& s, const Matrix& a, double psi, std::mt19937_64* rng) {
  const Index M = s.rows();
  Matrix y = s * a;
  if (rng) {
    std::normal_distribution<double> nd(0.0, std::sqrt(psi));
    for (Index i = 0; i < y.size(); ++i) y.data()[i] += nd(*rng);
  }
  AugmentedObs obs;
  obs.ybar.resize(M + 1, a.cols());
  obs.ybar.topRows(M) = y;
  obs.ybar.row(M) = a.colwise().sum();
  obs.psi = Vector::Constant(M, psi);
  return obs;
}

Matrix with_ones_row(const Matrix& s) {
  Matrix out(s.rows() + 1, s.cols());
  out.topRows(s.rows()) = s;
  out.row(s.rows()).setOnes();
  return out;
}

Matrix uniform(Index r, Index c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("likelihood_moments cases", "[bigamp]") {
  const auto g = likelihood_moments(2.0, RowKind::kGaussian, 1.0, 0.0, 1.0);
  CHECK(g.mean == Catch::Approx(1.0));
  CHECK(g.var == Catch::Approx(0.5));
  const auto d = likelihood_moments(1.0, RowKind::kDirac, 1.0, 7.0, 3.0);
  CHECK(d.mean == 1.0);
  CHECK(d.var == 0.0);
  const auto flat =
      likelihood_moments(5.0, RowKind::kGaussian, std::numeric_limits<double>::infinity(), 0.3, 2.0);
  CHECK(flat.mean == 0.3);
  CHECK(flat.var == 2.0);
  const auto big = likelihood_moments(5.0, RowKind::kGaussian, 1e14, 0.3, 2.0);
  CHECK(big.mean == Catch::Approx(0.3).margin(1e-12));
  CHECK(big.var == Catch::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(likelihood_moments(1.0, RowKind::kGaussian, 0.0, 0.0, 1.0), ParameterError);
  CHECK_THROWS_AS(likelihood_moments(1.0, RowKind::kGaussian, 1.0, 0.0, 0.0), ParameterError);
}

TEST_CASE("zero iterations return the initialization", "[bigamp]") {
  std::mt19937_64 rng(1);
  const Matrix s = uniform(6, 2, rng), a = uniform(2, 9, rng);
  const auto obs = exact_obs(s, a, 0.01, &rng);
  BigAmpInit init{with_ones_row(uniform(6, 2, rng)), Matrix::Constant(7, 2, 0.1),
                  uniform(2, 9, rng), Matrix::Constant(2, 9, 0.2), {}};
  BigAmpOptions opts;
  opts.max_iters = 0;
  const GaussianPriorField ps{init.shat, init.svar};
  const GaussianPriorField pa{init.ahat, init.avar};
  const auto out = run_bigamp(obs, ps, pa, init, opts);
  CHECK(out.shat_post == init.shat);
  CHECK(out.ahat_post == init.ahat);
  CHECK(out.iterations_run == 0);
  const double want = (obs.ybar.topRows(6) - init.shat.topRows(6) * init.ahat).norm();
  CHECK(out.final_residual == Catch::Approx(want).epsilon(1e-14));
}

TEST_CASE("all-Dirac priors pass through unchanged", "[bigamp]") {
  std::mt19937_64 rng(2);
  const Matrix s = with_ones_row(uniform(5, 3, rng));
  const Matrix a = uniform(3, 7, rng);
  const auto obs = exact_obs(s.topRows(5), a, 0.05, &rng);
  const GaussianPriorField ps{s, Matrix::Zero(6, 3)};
  const GaussianPriorField pa{a, Matrix::Zero(3, 7)};
  BigAmpInit init{s, Matrix::Zero(6, 3), a, Matrix::Zero(3, 7), {}};
  const auto out = run_bigamp(obs, ps, pa, init);
  CHECK(out.shat_post == s);
  CHECK(out.ahat_post == a);
  CHECK((out.shat_post * out.ahat_post - s * a).norm() == 0.0);
}

TEST_CASE("known endmembers reduce to the linear-Gaussian posterior", "[bigamp]") {
  std::mt19937_64 rng(3);
  const Index M = 20, N = 3, T = 10;
  const double psi = 1e-4;
  const Matrix s = uniform(M, N, rng);
  const Matrix a = uniform(N, T, rng);
  const auto obs = exact_obs(s, a, psi, &rng);
  const Matrix sbar = with_ones_row(s);
  const double m0 = 0.3, v0 = 0.5;
  const GaussianPriorField ps{sbar, Matrix::Zero(M + 1, N)};
  const GaussianPriorField pa{Matrix::Constant(N, T, m0), Matrix::Constant(N, T, v0)};
  BigAmpInit init{sbar, Matrix::Zero(M + 1, N), Matrix::Constant(N, T, m0),
                  Matrix::Constant(N, T, v0), {}};
  BigAmpOptions opts;
  opts.tol = 1e-14;
  opts.max_iters = 3000;
  const auto out = run_bigamp(obs, ps, pa, init, opts);

  // Oracle: condition N(m0, v0 I) on y = Sbar a + w, w ~ N(0, diag(psi, ..., psi, 0)).
  Matrix cov_y = v0 * sbar * sbar.transpose();
  for (Index m = 0; m < M; ++m) cov_y(m, m) += psi;
  const Eigen::LDLT<Matrix> ldlt(cov_y);
  for (Index t = 0; t < T; ++t) {
    const Vector prior = Vector::Constant(N, m0);
    const Vector innov = obs.ybar.col(t) - sbar * prior;
    const Vector post = prior + v0 * sbar.transpose() * ldlt.solve(innov);
    for (Index n = 0; n < N; ++n) CHECK(std::abs(out.ahat_post(n, t) - post[n]) < 1e-6);
  }
}

TEST_CASE("noiseless spike-slab factorization is recovered", "[bigamp]") {
  std::mt19937_64 rng(4);
  const Index M = 20, N = 2, T = 30;
  const Matrix s = uniform(M, N, rng);
  std::bernoulli_distribution act(0.5);
  std::normal_distribution<double> nd(1.0, 0.5);
  Matrix a = Matrix::Zero(N, T);
  for (Index i = 0; i < a.size(); ++i)
    if (act(rng)) {
      double v;
      do v = nd(rng);
      while (v < 0.0);
      a.data()[i] = v;
    }
  const auto obs = exact_obs(s, a, 1e-10, nullptr);
  const Matrix sbar = with_ones_row(s);
  Matrix svar = Matrix::Constant(M + 1, N, 1e-2);
  svar.row(M).setZero();
  const GaussianPriorField ps{sbar, svar};
  const SpikeSlabField pa{Matrix::Constant(N, T, 0.5),
                          {NngmParams::single(1.0, 0.25), NngmParams::single(1.0, 0.25)}};
  BigAmpInit init{sbar, svar, Matrix::Constant(N, T, 0.45), Matrix::Constant(N, T, 0.4), {}};
  BigAmpOptions opts;
  opts.max_iters = 2000;
  opts.tol = 1e-12;
  const auto out = run_bigamp(obs, ps, pa, init, opts);
  const Matrix z = s * a;
  CHECK(nmse_db(z, out.zhat_post.topRows(M)) < -60.0);
  CHECK((out.shat_post.row(M).array() == 1.0).all());
  CHECK(out.svar_post.minCoeff() >= 0.0);
  CHECK(out.avar_post.minCoeff() >= 0.0);
  CHECK(out.zvar_post.minCoeff() >= 0.0);

  // Fixed-point consistency: denoising the returned pseudo-measurements
  // reproduces the returned posteriors.
  Matrix am, av, sm, sv;
  pa.denoise(out.rhat, out.nur, am, av);
  ps.denoise(out.qhat, out.nuq, sm, sv);
  CHECK((am - out.ahat_post).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sm - out.shat_post).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("permuting materials permutes the messages", "[bigamp]") {
  std::mt19937_64 rng(5);
  const Index M = 12, N = 3, T = 15;
  const Matrix s = uniform(M, N, rng), a = uniform(N, T, rng);
  const auto obs = exact_obs(s, a, 1e-3, &rng);
  const Matrix sbar = with_ones_row(uniform(M, N, rng, 0.2, 0.8));
  Matrix svar = Matrix::Constant(M + 1, N, 0.05);
  svar.row(M).setZero();
  const Matrix am = uniform(N, T, rng, 0.1, 0.5);
  const Matrix avar = Matrix::Constant(N, T, 0.3);
  BigAmpOptions opts;
  opts.max_iters = 40;

  const std::vector<Index> perm{2, 0, 1};
  auto pc = [&](const Matrix& m) { return permute_columns(m, perm); };
  auto pr = [&](const Matrix& m) { return permute_rows(m, perm); };

  const auto o1 = run_bigamp(obs, GaussianPriorField{sbar, svar}, GaussianPriorField{am, avar},
                             BigAmpInit{sbar, svar, am, avar, {}}, opts);
  const auto o2 =
      run_bigamp(obs, GaussianPriorField{pc(sbar), pc(svar)}, GaussianPriorField{pr(am), pr(avar)},
                 BigAmpInit{pc(sbar), pc(svar), pr(am), pr(avar), {}}, opts);
  CHECK((pc(o1.qhat) - o2.qhat).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((pr(o1.rhat) - o2.rhat).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((o1.zhat_post - o2.zhat_post).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("damped and undamped runs reach the same fixed point", "[bigamp]") {
  std::mt19937_64 rng(6);
  const Index M = 30, N = 2, T = 12;
  const Matrix s = uniform(M, N, rng), a = uniform(N, T, rng);
  const auto obs = exact_obs(s, a, 1e-3, &rng);
  const Matrix sbar = with_ones_row(s);
  const GaussianPriorField ps{sbar, Matrix::Zero(M + 1, N)};
  const GaussianPriorField pa{Matrix::Constant(N, T, 0.5), Matrix::Constant(N, T, 1.0)};
  BigAmpInit init{sbar, Matrix::Zero(M + 1, N), Matrix::Constant(N, T, 0.5),
                  Matrix::Constant(N, T, 1.0), {}};
  BigAmpOptions damped;
  damped.tol = 1e-13;
  damped.max_iters = 5000;
  BigAmpOptions full = damped;
  full.damping = 1.0;
  full.adaptive = false;
  const auto o1 = run_bigamp(obs, ps, pa, init, damped);
  const auto o2 = run_bigamp(obs, ps, pa, init, full);
  CHECK(o2.status == BigAmpStatus::kConverged);
  CHECK(std::abs(o1.final_residual - o2.final_residual) < 1e-6);
}

TEST_CASE("non-finite data raise a numeric error", "[bigamp]") {
  std::mt19937_64 rng(7);
  const Matrix s = uniform(4, 2, rng), a = uniform(2, 5, rng);
  auto obs = exact_obs(s, a, 0.01, nullptr);
  obs.ybar(1, 1) = std::numeric_limits<double>::quiet_NaN();
  const Matrix sbar = with_ones_row(s);
  const GaussianPriorField ps{sbar, Matrix::Zero(5, 2)};
  const GaussianPriorField pa{a, Matrix::Constant(2, 5, 1.0)};
  BigAmpInit init{sbar, Matrix::Zero(5, 2), a, Matrix::Constant(2, 5, 1.0), {}};
  CHECK_THROWS_AS(run_bigamp(obs, ps, pa, init), NumericError);
  init.ahat = Matrix::Zero(3, 5);
  CHECK_THROWS_AS(run_bigamp(obs, ps, pa, init), ShapeError);
}
