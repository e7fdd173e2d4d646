#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "hutamp/baselines.hpp"
#include "hutamp/metrics.hpp"
#include "hutamp/synthetic.hpp"

using namespace hutamp;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

// Enumerate supports: the equality-constrained LS on each support, keeping
// feasible solutions with the lowest objective.
Vector fcls_enumerate(const Matrix& s, const Vector& y) {
  const Index N = s.cols();
  Vector best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << N); ++mask) {
    std::vector<Index> sup;
    for (Index i = 0; i < N; ++i)
      if (mask & (1u << i)) sup.push_back(i);
    const Index F = static_cast<Index>(sup.size());
    Matrix kkt = Matrix::Zero(F + 1, F + 1);
    Vector rhs(F + 1);
    for (Index p = 0; p < F; ++p) {
      for (Index q = 0; q < F; ++q) kkt(p, q) = s.col(sup[p]).dot(s.col(sup[q]));
      kkt(p, F) = kkt(F, p) = 1.0;
      rhs[p] = s.col(sup[p]).dot(y);
    }
    rhs[F] = 1.0;
    const Vector sol = kkt.fullPivLu().solve(rhs);
    Vector a = Vector::Zero(N);
    bool ok = true;
    for (Index p = 0; p < F; ++p) {
      if (sol[p] < -1e-13) ok = false;
      a[sup[p]] = std::max(0.0, sol[p]);
    }
    if (!ok) continue;
    const double obj = (y - s * a).squaredNorm();
    if (obj < best_obj - 1e-15) {
      best_obj = obj;
      best = a;
    }
  }
  return best;
}

Vector simplex_bisect(const Vector& v) {
  double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    ((v.array() - mid).cwiseMax(0.0).sum() > 1.0 ? lo : hi) = mid;
  }
  return (v.array() - 0.5 * (lo + hi)).cwiseMax(0.0);
}

}  // namespace

TEST_CASE("fsnmf on duplicated columns returns the distinct spectra", "[baselines]") {
  Rng rng(1);
  Matrix s(20, 3);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = sample_trunc_normal(rng, 0.5, 0.05);
  Matrix y(20, 6);
  y << s, s;
  const auto r = fsnmf_extract(y, 3, false);
  std::set<Index> cols;
  for (Index k : r.indices) cols.insert(k % 3);
  CHECK(cols.size() == 3);
  for (Index k = 0; k < 3; ++k) CHECK((r.s.col(k) - s.col(r.indices[k] % 3)).norm() == 0.0);
}

TEST_CASE("fsnmf finds planted pure pixels", "[baselines]") {
  SyntheticSpec spec;
  spec.M = 30;
  spec.N = 4;
  spec.grid = {1, 200};
  spec.K = 3;
  spec.P = 4;
  spec.seed = 3;
  const auto scene = gen_synthetic(spec);
  const auto r = fsnmf_extract(scene.cube.data(), 4, false);
  for (Index j : r.indices) CHECK(scene.a_true.col(j).maxCoeff() == 1.0);
  const auto perm = match_columns(scene.s_true, r.s);
  CHECK(nmse_db(scene.s_true, permute_columns(r.s, perm)) < -250.0);
}

TEST_CASE("subspace denoising helps at 20 dB", "[baselines]") {
  int wins = 0;
  for (int trial = 0; trial < 50; ++trial) {
    SyntheticSpec spec;
    spec.M = 50;
    spec.N = 3;
    spec.grid = {1, 300};
    spec.K = 2;
    spec.P = 30;
    spec.snr_db = 20.0;
    spec.seed = 11;
    spec.trial = static_cast<std::uint64_t>(trial);
    const auto scene = gen_synthetic(spec);
    const auto raw = fsnmf_extract(scene.cube.data(), 3, false);
    const auto den = fsnmf_extract(scene.cube.data(), 3, true);
    const double e_raw =
        nmse_db(scene.s_true, permute_columns(raw.s, match_columns(scene.s_true, raw.s)));
    const double e_den =
        nmse_db(scene.s_true, permute_columns(den.s, match_columns(scene.s_true, den.s)));
    wins += e_den < e_raw;
  }
  CHECK(wins >= 40);
}

TEST_CASE("fsnmf rejects rank-deficient data and bad N", "[baselines]") {
  Vector u = Vector::LinSpaced(10, 0.1, 1.0);
  const Matrix y = u * Vector::LinSpaced(8, 1.0, 2.0).transpose();
  CHECK_THROWS_AS(fsnmf_extract(y, 3, false), InitError);
  CHECK_THROWS_AS(fsnmf_extract(y, 0, false), ParameterError);
  CHECK_THROWS_AS(fsnmf_extract(y, 11, false), ParameterError);
}

TEST_CASE("fcls simple geometry", "[baselines]") {
  Matrix s(3, 3);
  s << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  Matrix y(3, 3);
  y.col(0) = s.col(1);
  y.col(1) = 0.5 * (s.col(0) + s.col(2));
  y.col(2) = Vector3d(2.0, -1.0, 0.0);  // off the simplex
  const Matrix a = fcls(y, s);
  CHECK((a.col(0) - Vector3d(0, 1, 0)).norm() < 1e-12);
  CHECK((a.col(1) - Vector3d(0.5, 0, 0.5)).norm() < 1e-12);
  CHECK((a.col(2) - Vector3d(1, 0, 0)).norm() < 1e-12);
  CHECK_THROWS_AS(fcls(Matrix::Ones(2, 1), s), ShapeError);
}

TEST_CASE("fcls matches the enumerated-support oracle", "[baselines]") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const Index M = 6, N = 2 + rep % 4;
    Matrix s(M, N);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = g(rng);
    Matrix y(M, 3);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = 2.0 * g(rng);
    FclsStats st;
    const Matrix a = fcls(y, s, &st);
    CHECK(st.max_kkt_residual < 1e-8);
    for (Index t = 0; t < 3; ++t) {
      const Vector ref = fcls_enumerate(s, y.col(t));
      CHECK((a.col(t) - ref).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(a.col(t).minCoeff() >= 0.0);
      CHECK(std::abs(a.col(t).sum() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("simplex projection", "[baselines]") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    Vector v(1 + rep % 7);
    for (Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    const Vector x = project_simplex(v);
    CHECK((x - simplex_bisect(v)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(x.minCoeff() >= 0.0);
    CHECK(std::abs(x.sum() - 1.0) < 1e-12);
    CHECK((project_simplex(x) - x).norm() < 1e-12);
  }
}
