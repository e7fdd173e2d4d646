#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "hutamp/metrics.hpp"

using namespace hutamp;
using Eigen::Vector2d;
using Eigen::Vector3d;

TEST_CASE("spectral angle", "[metrics]") {
  CHECK(sad(Vector3d(1, 2, 3), Vector3d(1, 2, 3)) == Catch::Approx(0.0).margin(1e-6));
  CHECK(sad(Vector3d(1, 0, 0), Vector3d(0, 1, 0)) == Catch::Approx(90.0));
  CHECK(sad(Vector3d(1, 0, 0), Vector3d(1, 1, 0)) == Catch::Approx(45.0));
  CHECK_THROWS_AS(sad(Vector3d(0, 0, 0), Vector3d(1, 0, 0)), InputError);
  CHECK_THROWS_AS(sad(Vector3d(1, 0, 0), Vector2d(1, 0)), ShapeError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vector a(8), b(8);
    for (Index i = 0; i < 8; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
    }
    CHECK(sad(a, b) == Catch::Approx(sad(b, a)).epsilon(1e-12));
    CHECK(sad(3.5 * a, 0.2 * b) == Catch::Approx(sad(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("nmse in dB", "[metrics]") {
  const Matrix t = Matrix::Ones(3, 2);
  CHECK(nmse_db(t, t) == kNmseFloorDb);
  CHECK(nmse_db(t, Matrix::Zero(3, 2)) == Catch::Approx(0.0).margin(1e-12));
  CHECK(nmse_db(t, 1.1 * t) == Catch::Approx(-20.0));
  CHECK_THROWS_AS(nmse_db(Matrix::Zero(3, 2), t), InputError);
  CHECK_THROWS_AS(nmse_db(t, Matrix::Ones(2, 3)), ShapeError);
}

TEST_CASE("alignment recovers a column permutation", "[metrics]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index N : {3, 5, 10}) {
    Matrix s(20, N), a(N, 30);
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = u(rng);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
    std::vector<Index> perm(N);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix se = permute_columns(s, perm);
    const Matrix ae = permute_rows(a, perm);
    const auto rep = evaluate(s, a, se, ae);
    CHECK(rep.nmse_s_db == kNmseFloorDb);
    CHECK(rep.nmse_a_db == kNmseFloorDb);
    CHECK(rep.sad_avg < 1e-6);
    CHECK(rep.success);
    for (Index i = 0; i < N; ++i) CHECK(perm[rep.permutation[i]] == i);
    CHECK(aligned_nmse(a, ae, AlignKind::kAbundanceRows).nmse_db == kNmseFloorDb);
  }
}

TEST_CASE("hungarian matches exhaustive search", "[metrics]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int rep = 0; rep < 5; ++rep) {
    const Index n = 9;
    Matrix c(n, n);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
    const auto h = hungarian(c);
    double hc = 0.0;
    for (Index i = 0; i < n; ++i) hc += c(i, h[i]);
    std::vector<Index> p(n);
    std::iota(p.begin(), p.end(), Index{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (Index i = 0; i < n; ++i) s += c(i, p[i]);
      best = std::min(best, s);
    } while (std::next_permutation(p.begin(), p.end()));
    CHECK(hc == Catch::Approx(best).epsilon(1e-12));
  }
}
