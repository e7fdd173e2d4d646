#pragma once

// Model-order selection: AICc-penalized log-likelihood over the number of
// materials, searched upward from n_min until the score first drops.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hutamp/core_data.hpp"
#include "hutamp/turbo.hpp"

namespace hutamp {

// Free scalars: S (MN), A under the simplex ((N-1)T), chain (3N), MRF (2N),
// NNGM (2NL means/variances + N(L-1) weights) and psi (M).
inline long long dof_count(long long N, long long M, long long T, long long L) {
  if (N < 1 || M < 1 || T < 1 || L < 1) throw ParameterError("dof_count: arguments must be >= 1");
  return M * N + (N - 1) * T + 5 * N + 2 * N * L + N * (L - 1) + M;
}

struct MosScore {
  double score = 0.0;
  double rss = 0.0;
  long long dof = 0;
  bool out_of_domain = false;  // M T - n - 1 <= 0
  bool exact_fit = false;      // rss == 0
};

inline MosScore mos_score_rss(double rss, Index M, Index T, Index N, int L) {
  MosScore s;
  s.rss = rss;
  s.dof = dof_count(N, M, T, L);
  const double mt = static_cast<double>(M) * static_cast<double>(T);
  const double n = static_cast<double>(s.dof);
  if (mt - n - 1.0 <= 0.0) {
    s.out_of_domain = true;
    s.score = -std::numeric_limits<double>::infinity();
    return s;
  }
  if (rss == 0.0) {
    s.exact_fit = true;
    s.score = std::numeric_limits<double>::infinity();
    return s;
  }
  s.score = -mt * std::log(rss / mt) - 2.0 * mt * n / (mt - n - 1.0);
  return s;
}

// Residual on the original scale: Y - S_N A_N with the mean restored.
inline MosScore mos_score(const HsiCube& cube, const UnmixResult& result, Index N, int L) {
  const Matrix& y = cube.data();
  const Matrix& s = result.endmembers.s;
  const Matrix& a = result.abundances.a;
  if (s.rows() != y.rows() || a.cols() != y.cols() || s.cols() != N || a.rows() != N)
    throw ShapeError("mos_score: result shape does not match cube and N");
  return mos_score_rss((y - s * a).squaredNorm(), y.rows(), y.cols(), N, L);
}

struct MosOptions {
  Index n_min = 2;
  Index n_max = 0;  // 0: min(M, 15)
  TurboOptions turbo;
};

struct MosCandidate {
  Index n = 0;
  MosScore score;
  bool failed = false;
  std::string error;
};

struct MosResult {
  Index n_hat = 0;
  std::vector<MosCandidate> candidates;  // in search order
  std::map<Index, UnmixResult> results;  // every successful candidate
  bool boundary = false;                 // search stopped at n_max
  int unmix_runs = 0;

  std::map<Index, double> scores() const {
    std::map<Index, double> out;
    for (const auto& c : candidates)
      if (!c.failed) out[c.n] = c.score.score;
    return out;
  }
};

// Injectable per-N evaluation, so the stopping rule can be tested in isolation.
using MosEvaluator = std::function<std::pair<UnmixResult, MosScore>(Index n)>;

inline MosResult select_model_order_with(Index n_min, Index n_max, const MosEvaluator& eval) {
  if (n_min < 1 || n_max < n_min) throw ParameterError("mos: need 1 <= n_min <= n_max");
  MosResult r;
  std::optional<Index> prev;
  double prev_score = -std::numeric_limits<double>::infinity();
  for (Index n = n_min; n <= n_max; ++n) {
    MosCandidate c;
    c.n = n;
    ++r.unmix_runs;
    try {
      auto [res, sc] = eval(n);
      c.score = sc;
      r.results.emplace(n, std::move(res));
    } catch (const Error& e) {
      c.failed = true;
      c.error = e.what();
      r.candidates.push_back(c);
      continue;
    }
    r.candidates.push_back(c);
    if (prev && c.score.score < prev_score) {
      r.n_hat = *prev;
      return r;
    }
    prev = n;
    prev_score = c.score.score;
  }
  if (!prev) throw NumericError("mos: every candidate order failed");
  r.n_hat = *prev;
  r.boundary = true;
  return r;
}

inline MosResult select_model_order(const HsiCube& cube, const MosOptions& opts = {}) {
  const Index M = cube.bands_count();
  const Index n_max = opts.n_max > 0 ? opts.n_max : std::min<Index>(M, 15);
  return select_model_order_with(opts.n_min, std::min(n_max, std::min(M, cube.pixels())),
                                 [&](Index n) {
                                   UnmixResult res = unmix(cube, n, opts.turbo);
                                   const MosScore sc = mos_score(cube, res, n, opts.turbo.L);
                                   return std::make_pair(std::move(res), sc);
                                 });
}

}  // namespace hutamp
