#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "casa/error.hpp"

namespace casa {

enum class SolverKind { automatic, dense, cg };

inline const char* solver_name(SolverKind s) {
  switch (s) {
    case SolverKind::dense: return "dense";
    case SolverKind::cg: return "cg";
    default: return "auto";
  }
}

inline SolverKind parse_solver(const std::string& name) {
  if (name == "dense") return SolverKind::dense;
  if (name == "cg") return SolverKind::cg;
  if (name == "auto") return SolverKind::automatic;
  throw ValidationError("solver", "solver must be one of dense, cg, auto; got '" + name + "'");
}

/// Node count at and above which `automatic` picks CG and the Laplacian is stored sparse.
inline constexpr std::size_t large_graph_nodes = 4096;

/// Hyperparameters for mask refinement and embedding pruning.
struct RefineConfig {
  double alpha = 1.0;           // confidence sharpness
  double lambda = 0.1;          // smoothness weight
  double delta = 0.3;           // mask threshold
  int gamma = 2;                // cross-attention upsampling factor
  double tau_percentile = 80.0; // embedding offset pruning percentile
  SolverKind solver = SolverKind::automatic;
  double cg_tol = 1e-8;
  std::optional<long> cg_max_iter;  // unset: 10 * node count
  bool ablation_uniform_weights = false;
  bool ablation_no_symmetrize = false;
  double lambda_floor = 1e-8;

  long max_iterations(std::size_t nodes) const {
    return cg_max_iter ? *cg_max_iter : 10 * static_cast<long>(nodes);
  }

  SolverKind resolve_solver(std::size_t nodes) const {
    if (solver != SolverKind::automatic) return solver;
    return nodes < large_graph_nodes ? SolverKind::dense : SolverKind::cg;
  }

  /// Throws ValidationError naming the first offending field.
  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(alpha) || alpha <= 0) throw ValidationError("alpha", "alpha must be > 0");
    if (!finite(lambda) || lambda < 0) throw ValidationError("lambda", "lambda must be >= 0");
    if (!finite(delta) || delta < 0 || delta > 1) throw ValidationError("delta", "delta must be in [0, 1]");
    if (gamma < 1) throw ValidationError("gamma", "gamma must be an integer >= 1");
    if (!finite(tau_percentile) || tau_percentile < 0 || tau_percentile > 100)
      throw ValidationError("tau_percentile", "tau_percentile must be in [0, 100]");
    if (!finite(cg_tol) || cg_tol <= 0) throw ValidationError("cg_tol", "cg_tol must be > 0");
    if (cg_max_iter && *cg_max_iter < 1) throw ValidationError("cg_max_iter", "cg_max_iter must be a positive integer");
    if (!finite(lambda_floor) || lambda_floor <= 0 || lambda_floor > 1)
      throw ValidationError("lambda_floor", "lambda_floor must be in (0, 1]");
  }
};

inline nlohmann::json to_json(const RefineConfig& c) {
  nlohmann::json j = {
      {"alpha", c.alpha},
      {"lambda", c.lambda},
      {"delta", c.delta},
      {"gamma", c.gamma},
      {"tau_percentile", c.tau_percentile},
      {"solver", solver_name(c.solver)},
      {"cg_tol", c.cg_tol},
      {"ablation_uniform_weights", c.ablation_uniform_weights},
      {"ablation_no_symmetrize", c.ablation_no_symmetrize},
      {"lambda_floor", c.lambda_floor},
  };
  j["cg_max_iter"] = c.cg_max_iter ? nlohmann::json(*c.cg_max_iter) : nlohmann::json(nullptr);
  return j;
}

namespace config_detail {

inline double number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw ValidationError(key, key + " must be a number");
  return v.get<double>();
}

inline long integer(const nlohmann::json& v, const std::string& key) {
  if (v.is_number_integer()) return v.get<long>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d)) return static_cast<long>(d);
  }
  throw ValidationError(key, key + " must be an integer");
}

inline bool boolean(const nlohmann::json& v, const std::string& key) {
  if (!v.is_boolean()) throw ValidationError(key, key + " must be true or false");
  return v.get<bool>();
}

}  // namespace config_detail

/// Overlays the keys of a flat JSON object onto `base`. Unknown keys are
/// reported through `warnings` (when given) and otherwise ignored.
inline RefineConfig apply_config_json(const nlohmann::json& doc, RefineConfig base = {},
                                      std::vector<std::string>* warnings = nullptr) {
  using namespace config_detail;
  if (!doc.is_object()) throw ValidationError("", "config must be a JSON object");
  RefineConfig c = base;
  for (const auto& [key, v] : doc.items()) {
    if (key == "alpha") c.alpha = number(v, key);
    else if (key == "lambda") c.lambda = number(v, key);
    else if (key == "delta") c.delta = number(v, key);
    else if (key == "gamma") {
      long g = integer(v, key);
      if (g < 1 || g > 1 << 16) throw ValidationError(key, "gamma must be an integer >= 1");
      c.gamma = static_cast<int>(g);
    } else if (key == "tau_percentile") c.tau_percentile = number(v, key);
    else if (key == "solver") {
      if (!v.is_string()) throw ValidationError(key, "solver must be a string");
      c.solver = parse_solver(v.get<std::string>());
    } else if (key == "cg_tol") c.cg_tol = number(v, key);
    else if (key == "cg_max_iter") {
      if (v.is_null()) c.cg_max_iter.reset();
      else c.cg_max_iter = integer(v, key);
    } else if (key == "ablation_uniform_weights") c.ablation_uniform_weights = boolean(v, key);
    else if (key == "ablation_no_symmetrize") c.ablation_no_symmetrize = boolean(v, key);
    else if (key == "lambda_floor") c.lambda_floor = number(v, key);
    else if (warnings) warnings->push_back("unknown config key '" + key + "' ignored");
  }
  c.validate();
  return c;
}

inline RefineConfig load_config(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return apply_config_json(doc, RefineConfig{}, warnings);
}

}  // namespace casa
