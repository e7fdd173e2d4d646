#include <catch2/catch_amalgamated.hpp>

#include <boost/math/tools/minima.hpp>
#include <random>
#include <tuple>

#include "hutamp/gauss_markov.hpp"
#include "oracles/dense_gaussian.hpp"

using namespace hutamp;

namespace {

std::vector<GaussianBelief> random_incoming(std::mt19937_64& rng, std::size_t M) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> lv(std::log(1e-3), std::log(10.0));
  std::vector<GaussianBelief> in(M);
  for (auto& b : in) b = {nd(rng), std::exp(lv(rng))};
  return in;
}

// Population statistics of the stationary chain.
GmStats population_stats(const GmChainParams& p, std::size_t M) {
  GmStats s;
  s.mean.assign(M, p.kappa);
  s.second.assign(M, p.sigma2 + p.kappa * p.kappa);
  s.lag.assign(M - 1, (1.0 - p.eta) * p.sigma2 + p.kappa * p.kappa);
  return s;
}

}  // namespace

TEST_CASE("eta = 1 makes every extrinsic message the marginal prior", "[gauss_markov]") {
  std::mt19937_64 rng(1);
  const GmChainParams p{0.3, 0.7, 1.0};
  const auto r = gm_smooth(random_incoming(rng, 9), p);
  for (const auto& e : r.extrinsic) {
    CHECK(e.mean == Catch::Approx(0.3).margin(1e-14));
    CHECK(e.var == Catch::Approx(0.7).epsilon(1e-14));
  }
}

TEST_CASE("single-element chain returns the prior", "[gauss_markov]") {
  const auto r = gm_smooth({{5.0, 0.1}}, {-1.0, 2.0, 0.4});
  REQUIRE(r.extrinsic.size() == 1);
  CHECK(r.extrinsic[0].mean == -1.0);
  CHECK(r.extrinsic[0].var == 2.0);
  CHECK(r.lag_cov.empty());
}

TEST_CASE("smoother matches dense joint-Gaussian inference", "[gauss_markov]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t M : {2u, 6u, 20u}) {
    for (int rep = 0; rep < 20; ++rep) {
      const GmChainParams p{u(rng) - 0.5, 0.1 + u(rng), u(rng)};
      const auto in = random_incoming(rng, M);
      std::vector<double> im, iv;
      for (const auto& b : in) {
        im.push_back(b.mean);
        iv.push_back(b.var);
      }
      const auto ref = oracle::dense_chain(p.kappa, p.sigma2, p.eta, im, iv);
      const auto r = gm_smooth(in, p);
      for (std::size_t m = 0; m < M; ++m) {
        CHECK(std::abs(r.extrinsic[m].mean - ref.ext_mean[m]) < 1e-9);
        CHECK(std::abs(r.extrinsic[m].var - ref.ext_var[m]) < 1e-9);
        CHECK(std::abs(r.posterior[m].mean - ref.post_mean[m]) < 1e-9);
        CHECK(std::abs(r.posterior[m].var - ref.post_var[m]) < 1e-9);
        if (m + 1 < M) CHECK(std::abs(r.lag_cov[m] - ref.lag_cov[m]) < 1e-9);
      }
    }
  }
}

TEST_CASE("extrinsic times incoming equals posterior", "[gauss_markov]") {
  std::mt19937_64 rng(3);
  const GmChainParams p{0.1, 0.5, 0.2};
  const auto in = random_incoming(rng, 30);
  const auto r = gm_smooth(in, p);
  for (std::size_t m = 0; m < in.size(); ++m) {
    const auto g = gaussian_product(r.extrinsic[m], in[m]);
    CHECK(std::abs(g.mean - r.posterior[m].mean) < 1e-10);
    CHECK(std::abs(g.var - r.posterior[m].var) < 1e-10);
  }
}

TEST_CASE("flat messages leave the stationary marginal", "[gauss_markov]") {
  std::vector<GaussianBelief> in(15, GaussianBelief{3.0, 1e12});
  const GmChainParams p{0.5, 0.04, 0.1};
  const auto r = gm_smooth(in, p);
  for (const auto& b : r.posterior) {
    CHECK(std::abs(b.mean - 0.5) < 1e-6);
    CHECK(std::abs(b.var - 0.04) < 1e-6);
  }
}

TEST_CASE("eta = 0 ties the chain to one value", "[gauss_markov]") {
  const GmChainParams p{0.0, 1.0, 0.0};
  const auto r = gm_smooth({{1.0, 1.0}, {3.0, 1.0}}, p);
  // Both elements equal a single N(0,1) variable seen twice.
  CHECK(r.posterior[0].mean == Catch::Approx(4.0 / 3.0));
  CHECK(r.posterior[1].mean == Catch::Approx(4.0 / 3.0));
  CHECK(r.extrinsic[0].mean == Catch::Approx(1.5));
}

TEST_CASE("gm_smooth rejects invalid inputs", "[gauss_markov]") {
  CHECK_THROWS_AS(gm_smooth({{0.0, 0.0}}, {}), ParameterError);
  CHECK_THROWS_AS(gm_smooth({{0.0, 1.0}}, {0.0, -1.0, 0.5}), ParameterError);
  CHECK_THROWS_AS(gm_smooth({{0.0, 1.0}}, {0.0, 1.0, 1.5}), ParameterError);
}

TEST_CASE("EM step from population statistics is a fixed point", "[gauss_markov]") {
  for (const GmChainParams truth :
       {GmChainParams{0.5, 0.04, 0.1}, GmChainParams{-0.2, 1.3, 0.7}, GmChainParams{0.0, 0.2, 1.0}}) {
    const auto next = em_update_gm(population_stats(truth, 50), truth);
    CHECK(std::abs(next.kappa - truth.kappa) < 1e-9);
    CHECK(std::abs(next.sigma2 - truth.sigma2) < 1e-9);
    CHECK(std::abs(next.eta - truth.eta) < 1e-9);
  }
}

TEST_CASE("degenerate posterior returns the common mean", "[gauss_markov]") {
  GmStats s;
  s.mean.assign(8, 0.7);
  s.second.assign(8, 0.49);
  s.lag.assign(7, 0.49);
  const auto p = em_update_gm(s, {0.0, 1.0, 0.35});
  CHECK(p.kappa == Catch::Approx(0.7).margin(1e-15));
  CHECK(p.sigma2 == kGmSigma2Floor);
  CHECK(p.eta == 0.35);
}

TEST_CASE("EM never lowers the expected complete-data log-likelihood", "[gauss_markov]") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const GmChainParams old{u(rng) - 0.5, 0.05 + u(rng), std::max(1e-3, u(rng))};
    const auto r = gm_smooth(random_incoming(rng, 2 + rep % 25), old);
    const GmStats st = gm_stats(r);
    const auto next = em_update_gm(st, old);
    next.validate();
    CHECK(gm_expected_loglik(st, next) >= gm_expected_loglik(st, old) - 1e-12);
    const auto frozen = em_update_gm(st, old, false);
    CHECK(frozen.eta == old.eta);
  }
}

namespace {

// Simulated stationary chain and near-noiseless observations of it.
std::vector<double> simulate_chain(const GmChainParams& p, std::size_t M, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> e(M);
  e[0] = p.kappa + std::sqrt(p.sigma2) * nd(rng);
  const double q = std::sqrt(p.eta * (2.0 - p.eta) * p.sigma2);
  for (std::size_t m = 1; m < M; ++m) e[m] = (1.0 - p.eta) * e[m - 1] + p.eta * p.kappa + q * nd(rng);
  return e;
}

// Complete-data maximum likelihood of (kappa, sigma2, eta) for a known path:
// kappa and sigma2 in closed form given eta, eta by a bounded 1-D search.
GmChainParams path_mle(const std::vector<double>& e) {
  const double M = static_cast<double>(e.size());
  auto profile = [&](double eta) {
    const double c = 1.0 - eta, v = eta * (2.0 - eta);
    double num = e[0], den = 1.0;
    for (std::size_t m = 1; m < e.size(); ++m) {
      num += eta / v * (e[m] - c * e[m - 1]);
      den += eta * eta / v;
    }
    const double kappa = num / den;
    double ss = (e[0] - kappa) * (e[0] - kappa);
    for (std::size_t m = 1; m < e.size(); ++m) {
      const double r = e[m] - c * e[m - 1] - eta * kappa;
      ss += r * r / v;
    }
    const double sigma2 = ss / M;
    const double nll = 0.5 * (M * std::log(sigma2) + (M - 1.0) * std::log(v) + M);
    return std::make_tuple(nll, kappa, sigma2);
  };
  const auto best = boost::math::tools::brent_find_minima(
      [&](double eta) { return std::get<0>(profile(eta)); }, 1e-6, 1.0, 50);
  const auto [nll, kappa, sigma2] = profile(best.first);
  return {kappa, sigma2, best.first};
}

}  // namespace

TEST_CASE("EM on a near-noiseless chain reaches the path likelihood maximum", "[gauss_markov]") {
  const GmChainParams truth{0.5, 0.04, 0.1};
  const std::size_t M = 2000;
  std::mt19937_64 rng(20);
  const auto e = simulate_chain(truth, M, rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<GaussianBelief> in(M);
  for (std::size_t m = 0; m < M; ++m) in[m] = {e[m] + 1e-3 * nd(rng), 1e-6};

  GmChainParams p{0.0, 1.0, 0.5};
  for (int sweep = 0; sweep < 10; ++sweep) p = em_update_gm(gm_smooth(in, p), p);
  const GmChainParams ml = path_mle(e);
  CHECK(std::abs(p.kappa - ml.kappa) / ml.kappa < 0.01);
  CHECK(std::abs(p.sigma2 - ml.sigma2) / ml.sigma2 < 0.02);
  CHECK(std::abs(p.eta - ml.eta) / ml.eta < 0.02);
}

TEST_CASE("EM estimates concentrate around the simulated parameters", "[gauss_markov]") {
  // At M = 2000 and eta = 0.1 a single path carries about 10% sampling spread
  // in sigma2 and eta, so this checks the median over independent paths.
  const GmChainParams truth{0.5, 0.04, 0.1};
  std::vector<double> ek, es, ee;
  for (int seed = 0; seed < 41; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto e = simulate_chain(truth, 2000, rng);
    std::vector<GaussianBelief> in(e.size());
    for (std::size_t m = 0; m < e.size(); ++m) in[m] = {e[m], 1e-6};
    GmChainParams p{0.0, 1.0, 0.5};
    for (int sweep = 0; sweep < 10; ++sweep) p = em_update_gm(gm_smooth(in, p), p);
    ek.push_back(p.kappa);
    es.push_back(p.sigma2);
    ee.push_back(p.eta);
  }
  auto med = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + 20, v.end());
    return v[20];
  };
  CHECK(std::abs(med(ek) - truth.kappa) / truth.kappa < 0.05);
  CHECK(std::abs(med(es) - truth.sigma2) / truth.sigma2 < 0.05);
  CHECK(std::abs(med(ee) - truth.eta) / truth.eta < 0.05);
}
