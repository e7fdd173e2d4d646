// hutamp: command-line front end for unmixing, model-order selection,
// synthetic scenes, sweeps and metric reports.
//
// Exit codes: 0 success, 1 validation error, 2 numeric failure,
// 3 partial failure (sweep rows that failed).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hutamp/hutamp.hpp"

namespace {

struct SharedFlags {
  std::string config;
  std::optional<long long> seed;
  std::optional<std::string> out;
  std::optional<long long> trials;
  std::optional<long long> n;
  std::optional<double> snr_db;
  std::optional<long long> max_turbo;
  std::optional<std::string> input;
  std::optional<std::string> truth;
  std::optional<std::string> estimate;
  std::vector<std::string> sets;
  bool mos = false;
  bool quiet = false;
};

void add_shared(CLI::App* app, SharedFlags& f) {
  app->add_option("--config", f.config, "key = value configuration file");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--trials", f.trials, "trials per sweep cell");
  app->add_option("--n", f.n, "number of materials");
  app->add_option("--snr-db", f.snr_db, "SNR in dB (synthetic scenes)");
  app->add_option("--max-turbo", f.max_turbo, "maximum turbo iterations");
  app->add_option("--set", f.sets, "extra key=value override (repeatable)");
  app->add_flag("--quiet", f.quiet, "suppress the summary");
}

// Flags override the config file; each maps onto one config key.
hutamp::Config build_config(const SharedFlags& f, const std::string& command) {
  hutamp::Config c = f.config.empty() ? hutamp::Config{} : hutamp::Config::load(f.config);
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.out) c.set("out", *f.out);
  if (f.trials) c.set("trials", std::to_string(*f.trials));
  if (f.n) c.set(command == "synth" || command == "sweep" ? "N" : "n", std::to_string(*f.n));
  if (f.snr_db) c.set(command == "synth" || command == "sweep" ? "snr_db" : "snr0_db",
                      hutamp::format_double(*f.snr_db));
  if (f.max_turbo) c.set("max_turbo", std::to_string(*f.max_turbo));
  if (f.input) c.set("input", *f.input);
  if (f.truth) c.set("truth", *f.truth);
  if (f.estimate) c.set("estimate", *f.estimate);
  if (f.mos) c.set("mos", "true");
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw hutamp::ConfigError(kv, "--set expects key=value");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

void print_unmix(const hutamp::UnmixReport& rep) {
  if (rep.mos) {
    std::printf("n_hat=%lld%s\n", static_cast<long long>(rep.n),
                rep.mos->boundary ? " (search hit n_max)" : "");
    std::printf("N,score,rss,dof\n");
    for (const auto& c : rep.mos->candidates) {
      if (c.failed) {
        std::printf("%lld,failed: %s\n", static_cast<long long>(c.n), c.error.c_str());
        continue;
      }
      std::printf("%lld,%.10g,%.10g,%lld\n", static_cast<long long>(c.n), c.score.score,
                  c.score.rss, c.score.dof);
    }
  }
  const auto& d = rep.result.diagnostics;
  std::printf("N=%lld turbo_iterations=%d final_residual=%.6g wall_time_s=%.3f\n",
              static_cast<long long>(rep.n), d.turbo_iterations,
              d.residual_history.empty() ? 0.0 : d.residual_history.back(), d.wall_time_s);
  for (const auto& w : d.warnings) std::printf("warning: %s\n", w.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HUT-AMP hyperspectral unmixing"};
  app.require_subcommand(1);

  SharedFlags f;
  auto* unmix = app.add_subcommand("unmix", "unmix a cube with a fixed or selected N");
  add_shared(unmix, f);
  unmix->add_option("--input", f.input, "input cube CSV");
  unmix->add_flag("--mos", f.mos, "select N by model-order search");

  auto* mos = app.add_subcommand("mos", "model-order selection");
  add_shared(mos, f);
  mos->add_option("--input", f.input, "input cube CSV");

  auto* synth = app.add_subcommand("synth", "write a synthetic scene and its truth bundle");
  add_shared(synth, f);

  auto* sweep = app.add_subcommand("sweep", "K x P x SNR experiment sweep");
  add_shared(sweep, f);

  auto* metrics = app.add_subcommand("metrics", "compare an estimate bundle to truth");
  add_shared(metrics, f);
  metrics->add_option("--truth", f.truth, "truth bundle directory");
  metrics->add_option("--estimate", f.estimate, "result bundle directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (unmix->parsed()) {
      const auto rep = hutamp::run_unmix(build_config(f, "unmix"));
      if (!f.quiet) print_unmix(rep);
    } else if (mos->parsed()) {
      const auto rep = hutamp::run_mos(build_config(f, "mos"));
      if (!f.quiet) print_unmix(rep);
    } else if (synth->parsed()) {
      const auto scene = hutamp::run_synth(build_config(f, "synth"));
      if (!f.quiet)
        std::printf("wrote M=%lld T=%lld N=%lld psi=%.6g\n",
                    static_cast<long long>(scene.cube.bands_count()),
                    static_cast<long long>(scene.cube.pixels()),
                    static_cast<long long>(scene.s_true.cols()), scene.psi);
    } else if (sweep->parsed()) {
      const auto cfg = build_config(f, "sweep");
      auto progress = [&](std::size_t done, std::size_t total) {
        if (!f.quiet) std::fprintf(stderr, "\rtrial %zu/%zu", done, total);
      };
      const auto rep = hutamp::run_sweep(cfg, progress);
      if (!f.quiet) {
        std::fprintf(stderr, "\n");
        std::fputs(rep.aggregate_csv.c_str(), stdout);
      }
      if (rep.failures > 0) {
        std::fprintf(stderr, "%d sweep rows failed\n", rep.failures);
        return 3;
      }
    } else if (metrics->parsed()) {
      const auto r = hutamp::run_metrics(build_config(f, "metrics"));
      if (!f.quiet) {
        std::printf("nmse_s_db=%.6g nmse_a_db=%.6g sad_avg=%.6g success=%d\n", r.nmse_s_db,
                    r.nmse_a_db, r.sad_avg, r.success ? 1 : 0);
        std::printf("permutation=");
        for (std::size_t i = 0; i < r.permutation.size(); ++i)
          std::printf("%s%lld", i ? "," : "", static_cast<long long>(r.permutation[i]));
        std::printf("\n");
      }
    }
  } catch (const hutamp::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const hutamp::InitError& e) {
    std::fprintf(stderr, "initialization failure: %s\n", e.what());
    return 2;
  } catch (const hutamp::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
