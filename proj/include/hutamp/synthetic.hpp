#pragma once

// Synthetic scenes: i.i.d. N_+(0.5, 0.05) or library endmembers, K-sparse
// P-pure / full Dirichlet / vertical-strip abundances, and white noise at a
// target SNR = ||Z||_F^2 / (M T psi).

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hutamp/core_data.hpp"
#include "hutamp/metrics.hpp"
#include "hutamp/scalar_priors.hpp"

namespace hutamp {

enum class EndmemberKind { kIid, kLibrary };
enum class AbundanceKind { kSparsePure, kDirichlet, kStrips };

struct SyntheticSpec {
  Index M = 50;
  Index N = 3;
  GridShape grid{1, 100};
  EndmemberKind endmembers = EndmemberKind::kIid;
  AbundanceKind abundances = AbundanceKind::kSparsePure;
  int K = 1;
  int P = 0;
  double dirichlet_alpha = 1.0;
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  std::uint64_t trial = 0;
  // i.i.d. endmember distribution N_+(theta, phi)
  double s_theta = 0.5;
  double s_phi = 0.05;
  Matrix library;            // M x L candidate spectra for kLibrary
  double min_sad_deg = 15.0;
  int max_library_attempts = 1000;

  void validate() const {
    if (M < 1 || N < 1) throw ParameterError("synth: M and N must be >= 1");
    if (grid.rows < 1 || grid.cols < 1) throw ParameterError("synth: grid must be >= 1x1");
    const Index T = grid.size();
    if (abundances == AbundanceKind::kSparsePure) {
      if (K < 1 || K > N) throw ParameterError("synth: K must satisfy 1 <= K <= N");
      if (P < 0 || P > T) throw ParameterError("synth: P must satisfy 0 <= P <= T");
    }
    if (!(dirichlet_alpha > 0.0)) throw ParameterError("synth: dirichlet_alpha must be > 0");
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
      throw ParameterError("synth: snr_db must be finite or +inf");
    if (abundances == AbundanceKind::kStrips && grid.cols < N)
      throw ParameterError("synth: strip scene needs T2 >= N");
    if (endmembers == EndmemberKind::kLibrary &&
        (library.rows() != M || library.cols() < N))
      throw ParameterError("synth: library must be M x L with L >= N");
    if (!(s_phi > 0.0)) throw ParameterError("synth: s_phi must be > 0");
  }
};

struct SyntheticScene {
  HsiCube cube;
  Matrix s_true;  // M x N
  Matrix a_true;  // N x T
  double psi = 0.0;
};

using Rng = std::mt19937_64;

// Independent stream per (seed, trial).
inline Rng make_rng(std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial),
                    static_cast<std::uint32_t>(trial >> 32)};
  return Rng(seq);
}

inline double sample_trunc_normal(Rng& rng, double theta, double phi) {
  const double sd = std::sqrt(phi);
  const double mass = std::exp(log_phic(-theta / sd));
  std::normal_distribution<double> nd(theta, sd);
  if (mass > 0.05) {
    while (true) {
      const double x = nd(rng);
      if (x >= 0.0) return x;
    }
  }
  // Inverse CDF on the retained tail.
  boost::math::normal_distribution<double> unit;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double lo = boost::math::cdf(unit, -theta / sd);
  double p = lo + u(rng) * (1.0 - lo);
  p = std::min(p, std::nextafter(1.0, 0.0));
  return std::max(0.0, theta + sd * boost::math::quantile(unit, p));
}

inline Vector sample_dirichlet(Rng& rng, int k, double alpha) {
  std::gamma_distribution<double> g(alpha, 1.0);
  Vector v(k);
  double s = 0.0;
  do {
    s = 0.0;
    for (int i = 0; i < k; ++i) s += (v[i] = g(rng));
  } while (!(s > 0.0));
  return v / s;
}

inline std::vector<Index> sample_subset(Rng& rng, Index n, Index k) {
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

inline Matrix sample_library_endmembers(Rng& rng, const SyntheticSpec& spec) {
  const Index L = spec.library.cols();
  for (int attempt = 0; attempt < spec.max_library_attempts; ++attempt) {
    const auto pick = sample_subset(rng, L, spec.N);
    bool ok = true;
    for (Index i = 0; i < spec.N && ok; ++i)
      for (Index j = i + 1; j < spec.N && ok; ++j)
        ok = sad(spec.library.col(pick[i]), spec.library.col(pick[j])) >= spec.min_sad_deg;
    if (!ok) continue;
    Matrix s(spec.M, spec.N);
    for (Index n = 0; n < spec.N; ++n) s.col(n) = spec.library.col(pick[n]);
    return s;
  }
  throw InputError("synth: library has no " + std::to_string(spec.N) +
                   " spectra with pairwise SAD >= " + std::to_string(spec.min_sad_deg) +
                   " degrees after " + std::to_string(spec.max_library_attempts) +
                   " attempts");
}

inline SyntheticScene gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, spec.trial);
  const Index M = spec.M, N = spec.N, T = spec.grid.size();
  SyntheticScene scene;

  if (spec.endmembers == EndmemberKind::kIid) {
    scene.s_true.resize(M, N);
    for (Index n = 0; n < N; ++n)
      for (Index m = 0; m < M; ++m)
        scene.s_true(m, n) = sample_trunc_normal(rng, spec.s_theta, spec.s_phi);
  } else {
    scene.s_true = sample_library_endmembers(rng, spec);
  }

  Matrix& A = scene.a_true;
  A = Matrix::Zero(N, T);
  switch (spec.abundances) {
    case AbundanceKind::kStrips:
      for (Index r = 0; r < spec.grid.rows; ++r)
        for (Index c = 0; c < spec.grid.cols; ++c)
          A(std::min(N - 1, c * N / spec.grid.cols), pixel_index(spec.grid, r, c)) = 1.0;
      break;
    case AbundanceKind::kDirichlet:
      for (Index t = 0; t < T; ++t)
        A.col(t) = sample_dirichlet(rng, static_cast<int>(N), spec.dirichlet_alpha);
      break;
    case AbundanceKind::kSparsePure: {
      // Pure pixels cycle through a random ordering of the materials, so
      // P >= N guarantees every material has one.
      const auto pure_cols = sample_subset(rng, T, spec.P);
      const auto order = sample_subset(rng, N, N);
      std::vector<char> is_pure(T, 0);
      for (Index i = 0; i < spec.P; ++i) {
        A(order[i % N], pure_cols[i]) = 1.0;
        is_pure[pure_cols[i]] = 1;
      }
      for (Index t = 0; t < T; ++t) {
        if (is_pure[t]) continue;
        const auto support = sample_subset(rng, N, spec.K);
        const Vector vals = sample_dirichlet(rng, spec.K, spec.dirichlet_alpha);
        for (int k = 0; k < spec.K; ++k) A(support[k], t) = vals[k];
      }
      break;
    }
  }

  const Matrix Z = scene.s_true * A;
  Matrix Y = Z;
  if (std::isfinite(spec.snr_db)) {
    const double snr = std::pow(10.0, spec.snr_db / 10.0);
    scene.psi = Z.squaredNorm() / (static_cast<double>(M * T) * snr);
    std::normal_distribution<double> noise(0.0, std::sqrt(scene.psi));
    for (Index t = 0; t < T; ++t)
      for (Index m = 0; m < M; ++m) Y(m, t) += noise(rng);
  }
  scene.cube = HsiCube(std::move(Y), spec.grid);
  return scene;
}

}  // namespace hutamp
