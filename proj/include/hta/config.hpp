#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hta/homotopy.hpp"
#include "hta/nmapg.hpp"

namespace hta {

using nlohmann::json;

struct DatasetRef {
  bool builtin = true;
  std::uint64_t builtin_seed = 0;
  std::string path; // labels file for an external dataset
};

struct SparsityConfig {
  SparsityMode mode = SparsityMode::kElement;
  std::size_t tile = 1; // group mode tiling
};

struct GoalConfig {
  bool targeted = true;
  std::vector<int> targets; // empty = all classes except the true label
  double kappa = 0.0;       // nontargeted confidence
};

struct RunConfig {
  std::string model_path;
  DatasetRef dataset;
  GoalConfig goal;
  double epsilon = 0.05;
  SparsityConfig sparsity;
  AttackMode mode = AttackMode::kFull;
  std::size_t images = 50;
  HomotopyParams homotopy;
  NmapgParams nmapg;
  PostAttackParams post_attack;
  std::string out_dir;
  std::size_t parallelism = 1;
  double zero_tol = kZeroTol;
  bool write_deltas = true;
  bool write_traces = false;
  bool render_maps = false;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::vector<std::string>& issues)
      : std::runtime_error(join(issues)), issues_(issues) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string s = "invalid config:";
    for (const auto& i : issues) s += "\n  - " + i;
    return s;
  }
  std::vector<std::string> issues_;
};

namespace detail {

class FieldReader {
 public:
  explicit FieldReader(std::vector<std::string>& errors) : errors_(&errors) {}

  template <typename T>
  void read(const json& obj, const std::string& field, T& out,
            const std::string& prefix = "") {
    if (!obj.contains(field)) return;
    try {
      out = obj.at(field).get<T>();
    } catch (const json::exception& e) {
      errors_->push_back(prefix + field + ": " + e.what());
    }
  }

  void fail(const std::string& field, const std::string& msg) {
    errors_->push_back(field + ": " + msg);
  }

 private:
  std::vector<std::string>* errors_;
};

inline void parse_params(const json& j, HomotopyParams& p, FieldReader& r) {
  r.read(j, "c", p.c, "homotopy.");
  r.read(j, "v", p.v, "homotopy.");
  r.read(j, "beta", p.beta, "homotopy.");
  r.read(j, "gamma", p.gamma, "homotopy.");
  r.read(j, "lambda_decay", p.lambda_decay, "homotopy.");
  r.read(j, "fine_decay", p.fine_decay, "homotopy.");
  r.read(j, "v_small", p.v_small, "homotopy.");
  r.read(j, "max_outer", p.max_outer, "homotopy.");
}

inline void parse_params(const json& j, NmapgParams& p, FieldReader& r) {
  r.read(j, "eta", p.eta, "nmapg.");
  r.read(j, "descent_delta", p.descent_delta, "nmapg.");
  r.read(j, "rho", p.rho, "nmapg.");
  r.read(j, "max_iter", p.max_iter, "nmapg.");
  r.read(j, "step_init", p.step_init, "nmapg.");
  r.read(j, "step_min", p.step_min, "nmapg.");
  r.read(j, "step_max", p.step_max, "nmapg.");
}

inline void parse_params(const json& j, PostAttackParams& p, FieldReader& r) {
  r.read(j, "w1", p.w1, "post_attack.");
  r.read(j, "w2", p.w2, "post_attack.");
  r.read(j, "step_size", p.step_size, "post_attack.");
  r.read(j, "iters_per_l0", p.iters_per_l0, "post_attack.");
  if (j.contains("p")) {
    const json& pv = j.at("p");
    if (pv == 1)
      p.p = PushNorm::kL1;
    else if (pv == 2)
      p.p = PushNorm::kL2;
    else if (pv == "inf")
      p.p = PushNorm::kLinf;
    else
      r.fail("post_attack.p", "must be 1, 2, or \"inf\"");
  }
}

}  // namespace detail

inline PushNorm push_norm_from_string(const std::string& s) {
  if (s == "1") return PushNorm::kL1;
  if (s == "2") return PushNorm::kL2;
  if (s == "inf") return PushNorm::kLinf;
  throw std::invalid_argument("push norm must be 1, 2, or inf, got '" + s + "'");
}

inline json push_norm_to_json(PushNorm p) {
  switch (p) {
    case PushNorm::kL1: return 1;
    case PushNorm::kL2: return 2;
    case PushNorm::kLinf: return "inf";
  }
  return nullptr;
}

/// Parse and validate a run config, collecting every problem before failing
/// so a bad file is diagnosed in one pass.
inline RunConfig parse_run_config(const json& j) {
  std::vector<std::string> errors;
  detail::FieldReader r(errors);
  RunConfig cfg;

  if (!j.is_object()) throw ConfigError({"config root must be a JSON object"});

  r.read(j, "model", cfg.model_path);
  if (cfg.model_path.empty()) r.fail("model", "a model path is required");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    if (d.contains("path")) {
      cfg.dataset.builtin = false;
      r.read(d, "path", cfg.dataset.path, "dataset.");
    } else if (d.contains("builtin_seed")) {
      cfg.dataset.builtin = true;
      r.read(d, "builtin_seed", cfg.dataset.builtin_seed, "dataset.");
    } else {
      r.fail("dataset", "need either {\"builtin_seed\": N} or {\"path\": FILE}");
    }
  }

  if (j.contains("goal")) {
    const json& g = j.at("goal");
    std::string type = "targeted";
    r.read(g, "type", type, "goal.");
    if (type == "targeted") {
      cfg.goal.targeted = true;
      r.read(g, "targets", cfg.goal.targets, "goal.");
    } else if (type == "nontargeted") {
      cfg.goal.targeted = false;
      r.read(g, "kappa", cfg.goal.kappa, "goal.");
      if (!(cfg.goal.kappa >= 0.0)) r.fail("goal.kappa", "must be >= 0");
    } else {
      r.fail("goal.type", "must be \"targeted\" or \"nontargeted\"");
    }
  }

  r.read(j, "epsilon", cfg.epsilon);
  if (!(cfg.epsilon > 0.0)) r.fail("epsilon", "must be > 0");

  if (j.contains("sparsity")) {
    const json& s = j.at("sparsity");
    std::string mode = "element";
    r.read(s, "mode", mode, "sparsity.");
    if (mode == "element") {
      cfg.sparsity.mode = SparsityMode::kElement;
    } else if (mode == "group") {
      cfg.sparsity.mode = SparsityMode::kGroup;
      r.read(s, "tile", cfg.sparsity.tile, "sparsity.");
      if (cfg.sparsity.tile == 0) r.fail("sparsity.tile", "must be >= 1");
    } else {
      r.fail("sparsity.mode", "must be \"element\" or \"group\"");
    }
  }

  if (j.contains("mode")) {
    std::string m;
    r.read(j, "mode", m);
    try {
      cfg.mode = attack_mode_from_string(m);
    } catch (const std::invalid_argument& e) {
      r.fail("mode", e.what());
    }
  }

  r.read(j, "images", cfg.images);
  if (cfg.images == 0) r.fail("images", "must be >= 1");

  if (j.contains("homotopy")) detail::parse_params(j.at("homotopy"), cfg.homotopy, r);
  if (j.contains("nmapg")) detail::parse_params(j.at("nmapg"), cfg.nmapg, r);
  if (j.contains("post_attack"))
    detail::parse_params(j.at("post_attack"), cfg.post_attack, r);

  r.read(j, "out", cfg.out_dir);
  if (cfg.out_dir.empty()) r.fail("out", "an output directory is required");
  r.read(j, "parallelism", cfg.parallelism);
  if (cfg.parallelism == 0) r.fail("parallelism", "must be >= 1");
  r.read(j, "zero_tol", cfg.zero_tol);
  if (!(cfg.zero_tol >= 0.0)) r.fail("zero_tol", "must be >= 0");
  r.read(j, "write_deltas", cfg.write_deltas);
  r.read(j, "write_traces", cfg.write_traces);
  r.read(j, "render_maps", cfg.render_maps);

  const auto check = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      r.fail(what, e.what());
    }
  };
  check("homotopy", [&] { cfg.homotopy.validate(); });
  check("nmapg", [&] { cfg.nmapg.validate(); });
  check("post_attack", [&] { cfg.post_attack.validate(); });

  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

inline json to_json(const RunConfig& cfg) {
  json j;
  j["model"] = cfg.model_path;
  if (cfg.dataset.builtin)
    j["dataset"] = {{"builtin_seed", cfg.dataset.builtin_seed}};
  else
    j["dataset"] = {{"path", cfg.dataset.path}};
  if (cfg.goal.targeted)
    j["goal"] = {{"type", "targeted"}, {"targets", cfg.goal.targets}};
  else
    j["goal"] = {{"type", "nontargeted"}, {"kappa", cfg.goal.kappa}};
  j["epsilon"] = cfg.epsilon;
  if (cfg.sparsity.mode == SparsityMode::kElement)
    j["sparsity"] = {{"mode", "element"}};
  else
    j["sparsity"] = {{"mode", "group"}, {"tile", cfg.sparsity.tile}};
  j["mode"] = attack_mode_name(cfg.mode);
  j["images"] = cfg.images;
  j["homotopy"] = {{"c", cfg.homotopy.c},
                   {"v", cfg.homotopy.v},
                   {"beta", cfg.homotopy.beta},
                   {"gamma", cfg.homotopy.gamma},
                   {"lambda_decay", cfg.homotopy.lambda_decay},
                   {"fine_decay", cfg.homotopy.fine_decay},
                   {"v_small", cfg.homotopy.v_small},
                   {"max_outer", cfg.homotopy.max_outer}};
  j["nmapg"] = {{"eta", cfg.nmapg.eta},
                {"descent_delta", cfg.nmapg.descent_delta},
                {"rho", cfg.nmapg.rho},
                {"max_iter", cfg.nmapg.max_iter},
                {"step_init", cfg.nmapg.step_init},
                {"step_min", cfg.nmapg.step_min},
                {"step_max", cfg.nmapg.step_max}};
  j["post_attack"] = {{"w1", cfg.post_attack.w1},
                      {"w2", cfg.post_attack.w2},
                      {"p", push_norm_to_json(cfg.post_attack.p)},
                      {"step_size", cfg.post_attack.step_size},
                      {"iters_per_l0", cfg.post_attack.iters_per_l0}};
  j["out"] = cfg.out_dir;
  j["parallelism"] = cfg.parallelism;
  j["zero_tol"] = cfg.zero_tol;
  j["write_deltas"] = cfg.write_deltas;
  j["write_traces"] = cfg.write_traces;
  j["render_maps"] = cfg.render_maps;
  return j;
}

}  // namespace hta
