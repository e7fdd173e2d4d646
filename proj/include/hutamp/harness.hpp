#pragma once

// Experiment harness: key=value configs, synthetic scenes, unmix/MOS jobs,
// metric reports and K x P x SNR sweeps with per-trial and aggregate CSVs.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hutamp/baselines.hpp"
#include "hutamp/bundle.hpp"
#include "hutamp/io.hpp"
#include "hutamp/metrics.hpp"
#include "hutamp/model_order.hpp"
#include "hutamp/synthetic.hpp"
#include "hutamp/turbo.hpp"

namespace hutamp {

// A bad or unknown setting. The message always starts with the key name.
class ConfigError : public InputError {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : InputError("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string s = trim(line);
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw InputError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty())
        throw InputError(origin + ":" + std::to_string(lineno) + ": empty key");
      c.kv_[key] = trim(s.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return kv_; }

  std::string str(const std::string& key, const std::string& def) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  std::string required(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty()) throw ConfigError(key, "required but not set");
    return it->second;
  }

  double real(const std::string& key, double def) const {
    return has(key) ? to_real(key, kv_.at(key)) : def;
  }

  long long integer(const std::string& key, long long def) const {
    return has(key) ? to_integer(key, kv_.at(key)) : def;
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string& v = kv_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
  }

  std::vector<double> real_list(const std::string& key, std::vector<double> def) const {
    if (!has(key)) return def;
    std::vector<double> out;
    for (const auto& item : split(key)) out.push_back(to_real(key, item));
    return out;
  }

  std::vector<long long> integer_list(const std::string& key, std::vector<long long> def) const {
    if (!has(key)) return def;
    std::vector<long long> out;
    for (const auto& item : split(key)) out.push_back(to_integer(key, item));
    return out;
  }

  void require_known(const std::set<std::string>& allowed, const std::string& command) const {
    for (const auto& [k, v] : kv_)
      if (!allowed.count(k)) throw ConfigError(k, "not a setting of '" + command + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::vector<std::string> split(const std::string& key) const {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(kv_.at(key));
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) throw ConfigError(key, "empty list element");
      out.push_back(item);
    }
    if (out.empty()) throw ConfigError(key, "list must be nonempty");
    return out;
  }

  static double to_real(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    try {
      return parse_double(v, key);
    } catch (const InputError&) {
      throw ConfigError(key, "expected a number, got '" + v + "'");
    }
  }

  static long long to_integer(const std::string& key, const std::string& v) {
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> kv_;
};

// ---- option builders -------------------------------------------------------

inline const std::set<std::string>& turbo_keys() {
  static const std::set<std::string> k{
      "max_turbo",       "turbo_tol",         "L",          "snr0_db",
      "spectral_coherence", "spatial_coherence", "learn_em", "scalar_psi",
      "alpha0",          "beta0",             "bigamp_max_iters", "bigamp_tol",
      "bigamp_damping"};
  return k;
}

inline TurboOptions turbo_options(const Config& c) {
  TurboOptions o;
  auto positive_int = [&](const std::string& key, int def) {
    const long long v = c.integer(key, def);
    if (v < 0 || v > 1000000) throw ConfigError(key, "must be in [0, 1e6]");
    return static_cast<int>(v);
  };
  o.max_turbo = positive_int("max_turbo", o.max_turbo);
  o.turbo_tol = c.real("turbo_tol", o.turbo_tol);
  if (!(o.turbo_tol > 0.0)) throw ConfigError("turbo_tol", "must be > 0");
  o.L = positive_int("L", o.L);
  if (o.L < 1) throw ConfigError("L", "must be >= 1");
  o.snr0_db = c.real("snr0_db", o.snr0_db);
  if (!std::isfinite(o.snr0_db)) throw ConfigError("snr0_db", "must be finite");
  o.spectral_coherence = c.boolean("spectral_coherence", o.spectral_coherence);
  o.spatial_coherence = c.boolean("spatial_coherence", o.spatial_coherence);
  o.learn_em = c.boolean("learn_em", o.learn_em);
  o.scalar_psi = c.boolean("scalar_psi", o.scalar_psi);
  o.alpha0 = c.real("alpha0", o.alpha0);
  if (!std::isfinite(o.alpha0)) throw ConfigError("alpha0", "must be finite");
  o.beta0 = c.real("beta0", o.beta0);
  if (!(o.beta0 >= 0.0) || !std::isfinite(o.beta0)) throw ConfigError("beta0", "must be >= 0");
  o.bigamp.max_iters = positive_int("bigamp_max_iters", o.bigamp.max_iters);
  o.bigamp.tol = c.real("bigamp_tol", o.bigamp.tol);
  if (!(o.bigamp.tol > 0.0)) throw ConfigError("bigamp_tol", "must be > 0");
  o.bigamp.damping = c.real("bigamp_damping", o.bigamp.damping);
  if (!(o.bigamp.damping > 0.0 && o.bigamp.damping <= 1.0))
    throw ConfigError("bigamp_damping", "must be in (0, 1]");
  return o;
}

inline const std::set<std::string>& scene_keys() {
  static const std::set<std::string> k{"M",  "N",   "T1", "T2",  "endmembers", "library",
                                       "abundances", "K", "P", "dirichlet_alpha", "snr_db",
                                       "seed", "trial"};
  return k;
}

inline SyntheticSpec scene_spec(const Config& c) {
  SyntheticSpec s;
  auto at_least_one = [&](const std::string& key, long long def) {
    const long long v = c.integer(key, def);
    if (v < 1) throw ConfigError(key, "must be >= 1");
    return static_cast<Index>(v);
  };
  s.M = at_least_one("M", s.M);
  s.N = at_least_one("N", s.N);
  s.grid.rows = at_least_one("T1", s.grid.rows);
  s.grid.cols = at_least_one("T2", s.grid.cols);
  const std::string em = c.str("endmembers", "iid");
  if (em == "iid") {
    s.endmembers = EndmemberKind::kIid;
  } else if (em == "library") {
    s.endmembers = EndmemberKind::kLibrary;
    const std::string path = c.required("library");
    if (!std::filesystem::exists(path)) throw ConfigError("library", "no such file '" + path + "'");
    s.library = load_matrix(path);
  } else {
    throw ConfigError("endmembers", "expected iid or library, got '" + em + "'");
  }
  const std::string ab = c.str("abundances", "sparse_pure");
  if (ab == "sparse_pure") s.abundances = AbundanceKind::kSparsePure;
  else if (ab == "dirichlet") s.abundances = AbundanceKind::kDirichlet;
  else if (ab == "strips") s.abundances = AbundanceKind::kStrips;
  else throw ConfigError("abundances", "expected sparse_pure, dirichlet or strips, got '" + ab + "'");
  s.K = static_cast<int>(c.integer("K", s.K));
  s.P = static_cast<int>(c.integer("P", s.P));
  s.dirichlet_alpha = c.real("dirichlet_alpha", s.dirichlet_alpha);
  s.snr_db = c.real("snr_db", s.snr_db);
  const long long seed = c.integer("seed", 0);
  if (seed < 0) throw ConfigError("seed", "must be >= 0");
  s.seed = static_cast<std::uint64_t>(seed);
  const long long trial = c.integer("trial", 0);
  if (trial < 0) throw ConfigError("trial", "must be >= 0");
  s.trial = static_cast<std::uint64_t>(trial);
  // Map spec validation failures back onto the responsible key.
  if (s.abundances == AbundanceKind::kSparsePure && (s.K < 1 || s.K > s.N))
    throw ConfigError("K", "must satisfy 1 <= K <= N");
  if (s.abundances == AbundanceKind::kSparsePure && (s.P < 0 || s.P > s.grid.size()))
    throw ConfigError("P", "must satisfy 0 <= P <= T1*T2");
  if (!(s.dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha", "must be > 0");
  if (std::isnan(s.snr_db) || s.snr_db == -std::numeric_limits<double>::infinity())
    throw ConfigError("snr_db", "must be finite or inf");
  if (s.abundances == AbundanceKind::kStrips && s.grid.cols < s.N)
    throw ConfigError("T2", "strip scene needs T2 >= N");
  if (s.endmembers == EndmemberKind::kLibrary && (s.library.rows() != s.M || s.library.cols() < s.N))
    throw ConfigError("library", "must be an M x L matrix with L >= N");
  s.validate();
  return s;
}

inline std::set<std::string> merge_keys(std::initializer_list<const std::set<std::string>*> sets,
                                        std::initializer_list<std::string> extra) {
  std::set<std::string> out(extra);
  for (const auto* s : sets) out.insert(s->begin(), s->end());
  return out;
}

inline std::filesystem::path out_dir(const Config& c) {
  const std::string out = c.required("out");
  return std::filesystem::path(out);
}

inline HsiCube input_cube(const Config& c) {
  const std::string path = c.required("input");
  if (!std::filesystem::exists(path)) throw ConfigError("input", "no such file '" + path + "'");
  return load_cube(path);
}

// ---- synth -----------------------------------------------------------------

inline SyntheticScene run_synth(const Config& c) {
  c.require_known(merge_keys({&scene_keys()}, {"out"}), "synth");
  const auto dir = out_dir(c);
  const SyntheticSpec spec = scene_spec(c);
  SyntheticScene scene = gen_synthetic(spec);
  store_truth(dir, scene, spec);
  return scene;
}

// ---- unmix / mos -----------------------------------------------------------

inline std::string mos_scores_csv(const MosResult& r) {
  std::string out = "N,score,rss,dof,status\n";
  for (const auto& cand : r.candidates) {
    out += std::to_string(cand.n) + ',';
    if (cand.failed) {
      out += ",,,failed\n";
      continue;
    }
    out += format_double(cand.score.score) + ',' + format_double(cand.score.rss) + ',' +
           std::to_string(cand.score.dof) + ',';
    out += cand.score.out_of_domain ? "out_of_domain" : cand.score.exact_fit ? "exact_fit" : "ok";
    out += '\n';
  }
  return out;
}

struct UnmixReport {
  Index n = 0;
  std::optional<MosResult> mos;
  UnmixResult result;
};

inline UnmixReport run_mos_job(const Config& c, const HsiCube& cube,
                               const std::filesystem::path& dir) {
  MosOptions mo;
  mo.turbo = turbo_options(c);
  mo.n_min = c.integer("n_min", 2);
  if (mo.n_min < 2) throw ConfigError("n_min", "must be >= 2");
  mo.n_max = c.integer("n_max", 0);
  if (mo.n_max != 0 && mo.n_max < mo.n_min) throw ConfigError("n_max", "must be >= n_min");
  UnmixReport rep;
  rep.mos = select_model_order(cube, mo);
  rep.n = rep.mos->n_hat;
  rep.result = rep.mos->results.at(rep.n);
  ensure_dir(dir);
  write_text(dir / "scores.csv", mos_scores_csv(*rep.mos));
  store_result(dir, rep.result);
  return rep;
}

inline UnmixReport run_unmix(const Config& c) {
  c.require_known(merge_keys({&turbo_keys()}, {"input", "out", "n", "mos", "n_min", "n_max", "seed"}),
                  "unmix");
  const auto dir = out_dir(c);
  const HsiCube cube = input_cube(c);
  if (c.boolean("mos", false)) return run_mos_job(c, cube, dir);
  const long long n = c.integer("n", 0);
  if (n < 1) throw ConfigError("n", "required: number of materials >= 1 (or set mos = true)");
  if (n > std::min(cube.bands_count(), cube.pixels()))
    throw ConfigError("n", "exceeds min(M, T) of the input cube");
  UnmixReport rep;
  rep.n = n;
  rep.result = unmix(cube, n, turbo_options(c));
  store_result(dir, rep.result);
  return rep;
}

inline UnmixReport run_mos(const Config& c) {
  c.require_known(merge_keys({&turbo_keys()}, {"input", "out", "n_min", "n_max", "seed"}), "mos");
  const auto dir = out_dir(c);
  return run_mos_job(c, input_cube(c), dir);
}

// ---- metrics ---------------------------------------------------------------

inline MetricsReport run_metrics(const Config& c) {
  c.require_known({"truth", "estimate", "out", "success_db"}, "metrics");
  const std::filesystem::path truth = c.required("truth");
  const std::filesystem::path est = c.required("estimate");
  if (!std::filesystem::exists(truth / "S_true.csv"))
    throw ConfigError("truth", "no S_true.csv in '" + truth.string() + "'");
  if (!std::filesystem::exists(est / "S.csv"))
    throw ConfigError("estimate", "no S.csv in '" + est.string() + "'");
  const Matrix s_true = load_matrix((truth / "S_true.csv").string());
  const Matrix a_true = load_matrix((truth / "A_true.csv").string());
  const Matrix s_est = load_matrix((est / "S.csv").string());
  const Matrix a_est = load_matrix((est / "A.csv").string());
  if (s_true.rows() != s_est.rows() || s_true.cols() != s_est.cols())
    throw ConfigError("estimate", "S.csv shape does not match S_true.csv");
  if (a_true.rows() != a_est.rows() || a_true.cols() != a_est.cols())
    throw ConfigError("estimate", "A.csv shape does not match A_true.csv");
  const MetricsReport r = evaluate(s_true, a_true, s_est, a_est, c.real("success_db", -40.0));
  if (c.has("out")) {
    const auto dir = out_dir(c);
    ensure_dir(dir);
    Json j{{"sad_per_material", r.sad_per_material},
           {"sad_avg", r.sad_avg},
           {"nmse_s_db", r.nmse_s_db},
           {"nmse_a_db", r.nmse_a_db},
           {"permutation", r.permutation},
           {"success", r.success}};
    write_text(dir / "metrics.json", j.dump(2) + '\n');
  }
  return r;
}

// ---- sweep -----------------------------------------------------------------

enum class Method { kHutamp, kFsnmf };

inline const char* to_string(Method m) { return m == Method::kHutamp ? "hutamp" : "fsnmf"; }

struct SweepCell {
  int K = 1;
  int P = 0;
  double snr_db = 0.0;
};

struct SweepConfig {
  SyntheticSpec base;
  std::vector<SweepCell> cells;
  std::vector<Method> methods;
  int trials = 1;
  int workers = 1;
  double success_db = -40.0;
  TurboOptions turbo;
};

struct SweepRow {
  std::size_t cell = 0;
  int trial = 0;
  Method method = Method::kHutamp;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  int turbo_iterations = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // ordered by (cell, trial, method)
  std::string rows_csv;
  std::string aggregate_csv;
  int failures = 0;
};

inline SweepConfig sweep_config(const Config& c) {
  c.require_known(merge_keys({&scene_keys(), &turbo_keys()},
                             {"out", "K_list", "P_list", "snr_list", "trials", "workers",
                              "methods", "success_db"}),
                  "sweep");
  SweepConfig s;
  s.base = scene_spec(c);
  const auto Ks = c.integer_list("K_list", {s.base.K});
  const auto Ps = c.integer_list("P_list", {s.base.P});
  const auto snrs = c.real_list("snr_list", {s.base.snr_db});
  for (auto k : Ks)
    if (k < 1 || k > s.base.N) throw ConfigError("K_list", "entries must satisfy 1 <= K <= N");
  for (auto p : Ps)
    if (p < 0 || p > s.base.grid.size())
      throw ConfigError("P_list", "entries must satisfy 0 <= P <= T1*T2");
  for (double v : snrs)
    if (std::isnan(v) || v == -std::numeric_limits<double>::infinity())
      throw ConfigError("snr_list", "entries must be finite or inf");
  for (double snr : snrs)
    for (auto k : Ks)
      for (auto p : Ps) s.cells.push_back({static_cast<int>(k), static_cast<int>(p), snr});
  const long long trials = c.integer("trials", 1);
  if (trials < 1) throw ConfigError("trials", "must be >= 1");
  s.trials = static_cast<int>(trials);
  const long long workers =
      c.integer("workers", std::max(1u, std::thread::hardware_concurrency()));
  if (workers < 1) throw ConfigError("workers", "must be >= 1");
  s.workers = static_cast<int>(workers);
  std::istringstream ms(c.str("methods", "hutamp,fsnmf"));
  std::string m;
  while (std::getline(ms, m, ',')) {
    if (m == "hutamp") s.methods.push_back(Method::kHutamp);
    else if (m == "fsnmf") s.methods.push_back(Method::kFsnmf);
    else throw ConfigError("methods", "unknown method '" + m + "' (hutamp, fsnmf)");
  }
  if (s.methods.empty()) throw ConfigError("methods", "list must be nonempty");
  s.success_db = c.real("success_db", -40.0);
  s.turbo = turbo_options(c);
  return s;
}

inline SyntheticSpec cell_spec(const SweepConfig& cfg, std::size_t cell, int trial) {
  SyntheticSpec s = cfg.base;
  s.K = cfg.cells[cell].K;
  s.P = cfg.cells[cell].P;
  s.snr_db = cfg.cells[cell].snr_db;
  // Independent scene per (cell, trial).
  s.trial = (static_cast<std::uint64_t>(cell) << 32) | static_cast<std::uint64_t>(trial);
  return s;
}

inline std::vector<SweepRow> run_cell_trial(const SweepConfig& cfg, std::size_t cell, int trial) {
  std::vector<SweepRow> rows;
  SyntheticScene scene;
  std::string scene_error;
  try {
    scene = gen_synthetic(cell_spec(cfg, cell, trial));
  } catch (const Error& e) {
    scene_error = std::string("synth: ") + e.what();
  }
  for (Method m : cfg.methods) {
    SweepRow row;
    row.cell = cell;
    row.trial = trial;
    row.method = m;
    if (!scene_error.empty()) {
      row.error = scene_error;
      rows.push_back(row);
      continue;
    }
    try {
      Matrix s_est, a_est;
      if (m == Method::kHutamp) {
        UnmixResult r = unmix(scene.cube, cfg.base.N, cfg.turbo);
        s_est = r.endmembers.s;
        a_est = r.abundances.a;
        row.turbo_iterations = r.diagnostics.turbo_iterations;
      } else {
        s_est = fsnmf_extract(scene.cube.data(), cfg.base.N, true).s;
        a_est = fcls(scene.cube.data(), s_est);
      }
      row.metrics = evaluate(scene.s_true, scene.a_true, s_est, a_est, cfg.success_db);
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + '"';
}

inline std::string num(double v) { return std::isnan(v) ? "" : format_double(v); }

}  // namespace detail

inline std::string sweep_rows_csv(const SweepConfig& cfg, const std::vector<SweepRow>& rows) {
  std::string out =
      "cell,K,P,snr_db,trial,method,status,nmse_s_db,nmse_a_db,sad_avg,success,turbo_iterations,"
      "error\n";
  for (const auto& r : rows) {
    const auto& cell = cfg.cells[r.cell];
    out += std::to_string(r.cell) + ',' + std::to_string(cell.K) + ',' + std::to_string(cell.P) +
           ',' + format_double(cell.snr_db) + ',' + std::to_string(r.trial) + ',' +
           to_string(r.method) + ',' + (r.ok ? "ok" : "failed") + ',';
    if (r.ok) {
      out += format_double(r.metrics.nmse_s_db) + ',' + format_double(r.metrics.nmse_a_db) +
             ',' + format_double(r.metrics.sad_avg) + ',' + (r.metrics.success ? "1" : "0");
    } else {
      out += ",,,";
    }
    out += ',' + std::to_string(r.turbo_iterations) + ',' + detail::csv_field(r.error) + '\n';
  }
  return out;
}

inline std::string sweep_aggregate_csv(const SweepConfig& cfg, const std::vector<SweepRow>& rows) {
  std::string out =
      "cell,K,P,snr_db,method,trials,failures,success_rate,median_nmse_s_db,mean_nmse_s_db,"
      "median_nmse_a_db,mean_nmse_a_db,median_sad,mean_sad\n";
  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    for (Method m : cfg.methods) {
      std::vector<double> ns, na, sad;
      int fails = 0, succ = 0, total = 0;
      for (const auto& r : rows) {
        if (r.cell != c || r.method != m) continue;
        ++total;
        if (!r.ok) {
          ++fails;
          continue;
        }
        ns.push_back(r.metrics.nmse_s_db);
        na.push_back(r.metrics.nmse_a_db);
        sad.push_back(r.metrics.sad_avg);
        succ += r.metrics.success ? 1 : 0;
      }
      const auto& cell = cfg.cells[c];
      // Failed trials count as unsuccessful.
      const double rate = total ? static_cast<double>(succ) / total : 0.0;
      out += std::to_string(c) + ',' + std::to_string(cell.K) + ',' + std::to_string(cell.P) +
             ',' + format_double(cell.snr_db) + ',' + to_string(m) + ',' +
             std::to_string(total) + ',' + std::to_string(fails) + ',' + format_double(rate) +
             ',' + detail::num(detail::median(ns)) + ',' + detail::num(detail::mean(ns)) + ',' +
             detail::num(detail::median(na)) + ',' + detail::num(detail::mean(na)) + ',' +
             detail::num(detail::median(sad)) + ',' + detail::num(detail::mean(sad)) + '\n';
    }
  }
  return out;
}

// Trials run on a worker pool; each job's rows land in its own slot and are
// emitted in (cell, trial) order by the collector, so output does not depend
// on scheduling.
inline SweepReport run_sweep(const SweepConfig& cfg,
                             const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  const std::size_t jobs = cfg.cells.size() * static_cast<std::size_t>(cfg.trials);
  std::vector<std::vector<SweepRow>> slots(jobs);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      slots[j] = run_cell_trial(cfg, j / cfg.trials, static_cast<int>(j % cfg.trials));
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mu);
        progress(d, jobs);
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  SweepReport rep;
  for (auto& s : slots)
    for (auto& r : s) {
      rep.failures += r.ok ? 0 : 1;
      rep.rows.push_back(std::move(r));
    }
  rep.rows_csv = sweep_rows_csv(cfg, rep.rows);
  rep.aggregate_csv = sweep_aggregate_csv(cfg, rep.rows);
  return rep;
}

inline SweepReport run_sweep(const Config& c,
                             const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  const SweepConfig cfg = sweep_config(c);
  const auto dir = out_dir(c);
  ensure_dir(dir);
  const auto t0 = std::chrono::steady_clock::now();
  SweepReport rep = run_sweep(cfg, progress);
  write_text(dir / "rows.csv", rep.rows_csv);
  write_text(dir / "aggregate.csv", rep.aggregate_csv);
  Json meta{{"config", c.entries()},
            {"wall_time_s",
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
            {"failures", rep.failures}};
  write_text(dir / "meta.json", meta.dump(2) + '\n');
  return rep;
}

}  // namespace hutamp
