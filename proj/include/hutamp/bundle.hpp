#pragma once

// On-disk result and truth bundles.
//   result: S.csv, A.csv, omega.json, log.jsonl (+ meta.json for timing)
//   truth:  cube.csv, S_true.csv, A_true.csv, meta.json

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "hutamp/io.hpp"
#include "hutamp/synthetic.hpp"
#include "hutamp/turbo.hpp"

namespace hutamp {

using Json = nlohmann::json;

// Flat key -> number/array map; per-material entries are arrays indexed by n.
inline Json to_json(const ModelParams& p) {
  Json j;
  j["psi"] = std::vector<double>(p.psi.data(), p.psi.data() + p.psi.size());
  Json omega = Json::array(), theta = Json::array(), phi = Json::array();
  std::vector<double> kappa, sigma2, eta, alpha, beta;
  for (std::size_t n = 0; n < p.nngm.size(); ++n) {
    omega.push_back(p.nngm[n].omega);
    theta.push_back(p.nngm[n].theta);
    phi.push_back(p.nngm[n].phi);
    kappa.push_back(p.gm[n].kappa);
    sigma2.push_back(p.gm[n].sigma2);
    eta.push_back(p.gm[n].eta);
    alpha.push_back(p.mrf[n].alpha);
    beta.push_back(p.mrf[n].beta);
  }
  j["nngm_omega"] = omega;
  j["nngm_theta"] = theta;
  j["nngm_phi"] = phi;
  j["gm_kappa"] = kappa;
  j["gm_sigma2"] = sigma2;
  j["gm_eta"] = eta;
  j["mrf_alpha"] = alpha;
  j["mrf_beta"] = beta;
  return j;
}

inline ModelParams model_params_from_json(const Json& j) {
  ModelParams p;
  const auto psi = j.at("psi").get<std::vector<double>>();
  p.psi = Eigen::Map<const Vector>(psi.data(), static_cast<Index>(psi.size()));
  const auto kappa = j.at("gm_kappa").get<std::vector<double>>();
  for (std::size_t n = 0; n < kappa.size(); ++n) {
    p.nngm.push_back({j.at("nngm_omega").at(n).get<std::vector<double>>(),
                      j.at("nngm_theta").at(n).get<std::vector<double>>(),
                      j.at("nngm_phi").at(n).get<std::vector<double>>()});
    p.gm.push_back({kappa[n], j.at("gm_sigma2").at(n).get<double>(),
                    j.at("gm_eta").at(n).get<double>()});
    p.mrf.push_back({j.at("mrf_alpha").at(n).get<double>(), j.at("mrf_beta").at(n).get<double>()});
  }
  p.validate();
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw InputError(path.string() + ": write failed");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError(dir.string() + ": cannot create directory: " + ec.message());
}

// Per-iteration log lines, deterministic given the inputs.
inline std::string log_jsonl(const UnmixResult& r) {
  std::string out;
  for (const auto& e : r.diagnostics.log) {
    Json j{{"iteration", e.iteration},
           {"residual", e.residual},
           {"bigamp_iterations", e.bigamp_iterations},
           {"bigamp_status", to_string(e.bigamp_status)},
           {"omega", to_json(e.omega)}};
    out += j.dump() + '\n';
  }
  Json fin{{"final", true},
           {"turbo_iterations", r.diagnostics.turbo_iterations},
           {"residual_history", r.diagnostics.residual_history},
           {"diverged", r.diagnostics.diverged},
           {"negative_endmember_entries", r.diagnostics.negative_endmember_entries},
           {"warnings", r.diagnostics.warnings}};
  out += fin.dump() + '\n';
  return out;
}

inline void store_result(const std::filesystem::path& dir, const UnmixResult& r) {
  ensure_dir(dir);
  write_csv_matrix((dir / "S.csv").string(), r.endmembers.s);
  write_csv_matrix((dir / "A.csv").string(), r.abundances.a);
  write_text(dir / "omega.json", to_json(r.omega).dump(2) + '\n');
  write_text(dir / "log.jsonl", log_jsonl(r));
  // Timing is the only nondeterministic output and lives here alone.
  write_text(dir / "meta.json",
             Json{{"wall_time_s", r.diagnostics.wall_time_s}}.dump(2) + '\n');
}

inline const char* to_string(EndmemberKind k) {
  return k == EndmemberKind::kIid ? "iid" : "library";
}

inline const char* to_string(AbundanceKind k) {
  switch (k) {
    case AbundanceKind::kSparsePure: return "sparse_pure";
    case AbundanceKind::kDirichlet: return "dirichlet";
    case AbundanceKind::kStrips: return "strips";
  }
  return "?";
}

inline Json to_json(const SyntheticSpec& s) {
  return Json{{"M", s.M},
              {"N", s.N},
              {"T1", s.grid.rows},
              {"T2", s.grid.cols},
              {"endmembers", to_string(s.endmembers)},
              {"abundances", to_string(s.abundances)},
              {"K", s.K},
              {"P", s.P},
              {"dirichlet_alpha", s.dirichlet_alpha},
              {"snr_db", std::isfinite(s.snr_db) ? Json(s.snr_db) : Json("inf")},
              {"seed", s.seed},
              {"trial", s.trial}};
}

struct TruthBundle {
  HsiCube cube;
  Matrix s_true;
  Matrix a_true;
};

inline void store_truth(const std::filesystem::path& dir, const SyntheticScene& scene,
                        const SyntheticSpec& spec) {
  ensure_dir(dir);
  store_cube((dir / "cube.csv").string(), scene.cube);
  write_csv_matrix((dir / "S_true.csv").string(), scene.s_true);
  write_csv_matrix((dir / "A_true.csv").string(), scene.a_true);
  Json meta{{"spec", to_json(spec)}, {"psi", scene.psi}};
  write_text(dir / "meta.json", meta.dump(2) + '\n');
}

inline TruthBundle load_truth(const std::filesystem::path& dir) {
  return {load_cube((dir / "cube.csv").string()), load_matrix((dir / "S_true.csv").string()),
          load_matrix((dir / "A_true.csv").string())};
}

}  // namespace hutamp
