#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hta/config.hpp"
#include "hta/homotopy.hpp"
#include "hta/image_io.hpp"
#include "hta/model.hpp"
#include "hta/partition.hpp"
#include "hta/render.hpp"
#include "hta/synth.hpp"
#include "hta/tensor_io.hpp"

namespace hta {

// Batch evaluation: run one attack per (image, target) task, write one
// deterministic record per task, and aggregate the best/average/worst cases
// over the targeted sweep. Parallelism only schedules tasks; every artifact
// is a pure function of the config.

struct AttackRecord {
  std::size_t image_index = 0;
  int target = -1; // -1 for nontargeted
  int true_label = -1;
  AttackReport report;
  std::string error; // nonempty when the attack itself failed to run
};

inline json norms_to_json(const NormReport& n) {
  return json{{"l0", n.l0}, {"l1", n.l1}, {"l2", n.l2}, {"linf", n.linf}};
}

inline json record_to_json(const AttackRecord& rec, const RunConfig& cfg) {
  json j;
  j["image_index"] = rec.image_index;
  j["true_label"] = rec.true_label;
  if (cfg.goal.targeted)
    j["goal"] = {{"type", "targeted"}, {"target", rec.target}};
  else
    j["goal"] = {{"type", "nontargeted"}, {"kappa", cfg.goal.kappa}};
  j["epsilon"] = cfg.epsilon;
  j["mode"] = attack_mode_name(cfg.mode);
  if (cfg.sparsity.mode == SparsityMode::kElement)
    j["sparsity"] = {{"mode", "element"}};
  else
    j["sparsity"] = {{"mode", "group"}, {"tile", cfg.sparsity.tile}};
  j["success"] = rec.report.success;
  j["norms"] = norms_to_json(rec.report.norms);
  if (cfg.sparsity.mode == SparsityMode::kGroup)
    j["group_l20"] = rec.report.group_l20;
  j["outer_iterations"] = rec.report.outer_iterations;
  j["lambda_path"] = rec.report.lambda_path;
  j["post_attack_invocations"] = rec.report.post_attack_invocations;
  j["predicted"] = rec.report.predicted_class;
  if (!rec.error.empty()) j["error"] = rec.error;
  return j;
}

/// Minimal inverse of record_to_json: the fields the aggregator needs.
inline AttackRecord record_from_json(const json& j) {
  AttackRecord rec;
  rec.image_index = j.at("image_index").get<std::size_t>();
  rec.true_label = j.at("true_label").get<int>();
  if (j.at("goal").at("type") == "targeted")
    rec.target = j.at("goal").at("target").get<int>();
  rec.report.success = j.at("success").get<bool>();
  const json& n = j.at("norms");
  rec.report.norms.l0 = n.at("l0").get<std::size_t>();
  rec.report.norms.l1 = n.at("l1").get<double>();
  rec.report.norms.l2 = n.at("l2").get<double>();
  rec.report.norms.linf = n.at("linf").get<double>();
  rec.report.outer_iterations = j.at("outer_iterations").get<std::size_t>();
  if (j.contains("error")) rec.error = j.at("error").get<std::string>();
  return rec;
}

struct CaseStats {
  double asr = 0.0; // percent
  double mean_l0 = 0.0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  double mean_linf = 0.0;
  std::size_t counted = 0; // attacks contributing to the norm means
};

struct BatchSummary {
  bool targeted = true;
  std::size_t images = 0;
  std::size_t attacks = 0;
  std::size_t successes = 0;
  CaseStats best, average, worst; // nontargeted: all three are the same case
  double wall_seconds = 0.0;      // informational only; never serialized
};

namespace detail {

struct Accum {
  double l0 = 0, l1 = 0, l2 = 0, linf = 0;
  std::size_t n = 0;
  void add(const NormReport& r) {
    l0 += static_cast<double>(r.l0);
    l1 += r.l1;
    l2 += r.l2;
    linf += r.linf;
    ++n;
  }
  CaseStats stats(std::size_t asr_num, std::size_t asr_den) const {
    CaseStats s;
    s.asr = asr_den ? 100.0 * static_cast<double>(asr_num) /
                          static_cast<double>(asr_den)
                    : 0.0;
    if (n) {
      s.mean_l0 = l0 / static_cast<double>(n);
      s.mean_l1 = l1 / static_cast<double>(n);
      s.mean_l2 = l2 / static_cast<double>(n);
      s.mean_linf = linf / static_cast<double>(n);
    }
    s.counted = n;
    return s;
  }
};

}  // namespace detail

/// Aggregate a targeted sweep. Per image, the best (worst) case is the
/// successful attack of smallest (largest) l0, ties toward the lower target
/// index; the average case covers every successful attack. Best-case ASR
/// counts images with any success, worst-case ASR images where every target
/// succeeded, average-case ASR all (image, target) pairs.
inline BatchSummary aggregate_targeted(const std::vector<AttackRecord>& records,
                                       double wall_seconds = 0.0) {
  BatchSummary s;
  s.targeted = true;
  s.attacks = records.size();
  s.wall_seconds = wall_seconds;

  std::vector<std::size_t> image_ids;
  for (const auto& r : records)
    if (std::find(image_ids.begin(), image_ids.end(), r.image_index) ==
        image_ids.end())
      image_ids.push_back(r.image_index);
  std::sort(image_ids.begin(), image_ids.end());
  s.images = image_ids.size();

  detail::Accum best_acc, avg_acc, worst_acc;
  std::size_t any_success = 0, all_success = 0, pair_success = 0;
  for (std::size_t img : image_ids) {
    const AttackRecord* best = nullptr;
    const AttackRecord* worst = nullptr;
    std::size_t succ = 0, total = 0;
    for (const auto& r : records) {
      if (r.image_index != img) continue;
      ++total;
      if (!r.report.success) continue;
      ++succ;
      avg_acc.add(r.report.norms);
      const auto better = [](const AttackRecord& a, const AttackRecord& b) {
        if (a.report.norms.l0 != b.report.norms.l0)
          return a.report.norms.l0 < b.report.norms.l0;
        return a.target < b.target;
      };
      if (!best || better(r, *best)) best = &r;
      if (!worst || better(*worst, r)) worst = &r;
    }
    pair_success += succ;
    if (succ > 0) {
      ++any_success;
      best_acc.add(best->report.norms);
      worst_acc.add(worst->report.norms);
      if (best->report.norms.l0 > worst->report.norms.l0)
        throw std::logic_error("aggregate_targeted: best/worst order violated");
    }
    if (succ == total && total > 0) ++all_success;
  }
  s.successes = pair_success;
  s.best = best_acc.stats(any_success, s.images);
  s.average = avg_acc.stats(pair_success, s.attacks);
  s.worst = worst_acc.stats(all_success, s.images);
  if (s.best.counted && s.average.counted &&
      (s.best.mean_l0 > s.average.mean_l0 + 1e-9 ||
       s.average.mean_l0 > s.worst.mean_l0 + 1e-9))
    throw std::logic_error("aggregate_targeted: case ordering violated");
  return s;
}

inline BatchSummary aggregate_nontargeted(const std::vector<AttackRecord>& records,
                                          double wall_seconds = 0.0) {
  BatchSummary s;
  s.targeted = false;
  s.attacks = records.size();
  s.images = records.size();
  s.wall_seconds = wall_seconds;
  detail::Accum acc;
  std::size_t succ = 0;
  for (const auto& r : records)
    if (r.report.success) {
      ++succ;
      acc.add(r.report.norms);
    }
  s.successes = succ;
  s.best = s.average = s.worst = acc.stats(succ, records.size());
  return s;
}

inline json summary_to_json(const BatchSummary& s) {
  const auto case_json = [](const CaseStats& c) {
    return json{{"asr", c.asr},     {"l0", c.mean_l0},
                {"l1", c.mean_l1},  {"l2", c.mean_l2},
                {"linf", c.mean_linf}, {"counted", c.counted}};
  };
  json j;
  j["targeted"] = s.targeted;
  j["images"] = s.images;
  j["attacks"] = s.attacks;
  j["successes"] = s.successes;
  if (s.targeted) {
    j["best"] = case_json(s.best);
    j["average"] = case_json(s.average);
    j["worst"] = case_json(s.worst);
  } else {
    j["overall"] = case_json(s.average);
  }
  return j;
}

inline std::string format_summary_table(const BatchSummary& s) {
  std::ostringstream os;
  char line[160];
  os << (s.targeted ? "targeted" : "nontargeted") << " batch: " << s.images
     << " images, " << s.attacks << " attacks, " << s.successes
     << " successes\n";
  std::snprintf(line, sizeof(line), "%-10s %7s %9s %9s %9s %9s\n", "case",
                "ASR", "l0", "l1", "l2", "linf");
  os << line;
  const auto row = [&](const char* name, const CaseStats& c) {
    std::snprintf(line, sizeof(line), "%-10s %6.1f%% %9.2f %9.4f %9.4f %9.4f\n",
                  name, c.asr, c.mean_l0, c.mean_l1, c.mean_l2, c.mean_linf);
    os << line;
  };
  if (s.targeted) {
    row("best", s.best);
    row("average", s.average);
    row("worst", s.worst);
  } else {
    row("overall", s.average);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Batch execution

struct BatchTask {
  std::size_t image_index = 0;
  int target = -1;
  int true_label = -1;
  const Tensor* image = nullptr;
};

inline std::vector<LabeledImage> load_external_dataset(const std::string& labels_path) {
  std::ifstream is(labels_path);
  if (!is) throw std::runtime_error("cannot open dataset file: " + labels_path);
  const std::filesystem::path base =
      std::filesystem::path(labels_path).parent_path();
  std::vector<LabeledImage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(labels_path + ":" + std::to_string(lineno) +
                               ": expected <path>\\t<label>");
    const std::string rel = line.substr(0, tab);
    int label = 0;
    try {
      label = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw std::runtime_error(labels_path + ":" + std::to_string(lineno) +
                               ": malformed label '" + line.substr(tab + 1) + "'");
    }
    const std::string full = (base / rel).string();
    Tensor img = full.size() > 4 && full.substr(full.size() - 4) == ".tsr"
                     ? read_tsr(full)
                     : read_png(full);
    out.push_back(LabeledImage{std::move(img), label});
  }
  return out;
}

struct BatchOutcome {
  BatchSummary summary;
  std::vector<AttackRecord> records;
};

/// Run a whole batch: pick the first `images` correctly-classified test
/// images, attack each per the goal spec, write one record file per task plus
/// the summary and the resolved config. Deterministic for a fixed config;
/// the parallelism degree changes scheduling only.
inline BatchOutcome run_batch(const RunConfig& cfg,
                              std::vector<NmapgTrace>* traces_out = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const Model model = load_model(cfg.model_path);

  std::vector<LabeledImage> pool;
  if (cfg.dataset.builtin) {
    SyntheticSpec spec;
    spec.seed = cfg.dataset.builtin_seed;
    spec.image_shape = model.input_shape();
    SyntheticDataset data(spec);
    pool = data.test();
  } else {
    pool = load_external_dataset(cfg.dataset.path);
  }

  // Only attack images the model classifies correctly; an already wrong
  // prediction makes the nontargeted goal vacuous.
  std::vector<LabeledImage> selected;
  for (const auto& s : pool) {
    if (selected.size() >= cfg.images) break;
    if (predict_class(model, s.image) == s.label) selected.push_back(s);
  }
  if (selected.empty())
    throw std::runtime_error("run_batch: no correctly-classified images found");

  std::optional<GroupPartition> partition;
  if (cfg.sparsity.mode == SparsityMode::kGroup)
    partition.emplace(build_tile_partition(model.input_shape(), cfg.sparsity.tile));

  std::vector<BatchTask> tasks;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (cfg.goal.targeted) {
      std::vector<int> targets = cfg.goal.targets;
      if (targets.empty())
        for (int t = 0; t < static_cast<int>(model.num_classes()); ++t)
          targets.push_back(t);
      std::sort(targets.begin(), targets.end());
      targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
      for (int t : targets)
        if (t != selected[i].label)
          tasks.push_back(BatchTask{i, t, selected[i].label, &selected[i].image});
    } else {
      tasks.push_back(BatchTask{i, -1, selected[i].label, &selected[i].image});
    }
  }

  std::vector<AttackRecord> records(tasks.size());
  std::vector<NmapgTrace> traces(cfg.write_traces || traces_out ? tasks.size() : 0);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    while (true) {
      const std::size_t ti = next.fetch_add(1);
      if (ti >= tasks.size()) break;
      const BatchTask& task = tasks[ti];
      AttackRecord rec;
      rec.image_index = task.image_index;
      rec.target = task.target;
      rec.true_label = task.true_label;
      try {
        AttackProblem prob;
        prob.model = &model;
        prob.x0 = *task.image;
        prob.goal = cfg.goal.targeted
                        ? AttackGoal::targeted(task.target)
                        : AttackGoal::nontargeted(task.true_label, cfg.goal.kappa);
        prob.epsilon = cfg.epsilon;
        prob.sparsity = cfg.sparsity.mode;
        prob.partition = partition ? &*partition : nullptr;
        prob.zero_tol = cfg.zero_tol;
        NmapgTrace* tr = traces.empty() ? nullptr : &traces[ti];
        rec.report = homotopy_attack(prob, cfg.homotopy, cfg.nmapg,
                                     cfg.post_attack, cfg.mode, tr);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      records[ti] = std::move(rec);
    }
  };
  const std::size_t workers = std::min(cfg.parallelism, tasks.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // All artifacts are written single-threaded with deterministic names.
  namespace fs = std::filesystem;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      const BatchTask& task = tasks[ti];
      char stem[64];
      if (task.target >= 0)
        std::snprintf(stem, sizeof(stem), "img%04zu_tgt%d", task.image_index,
                      task.target);
      else
        std::snprintf(stem, sizeof(stem), "img%04zu_nt", task.image_index);
      {
        std::ofstream os(out / (std::string("report_") + stem + ".json"));
        os << record_to_json(records[ti], cfg).dump() << '\n';
      }
      if (cfg.write_deltas && records[ti].error.empty())
        write_tsr((out / (std::string("delta_") + stem + ".tsr")).string(),
                  records[ti].report.delta);
      if (cfg.render_maps && records[ti].error.empty() &&
          records[ti].report.delta.shape().size() == 3 &&
          records[ti].report.delta.shape()[2] == 3)
        render_position_map(records[ti].report.delta,
                            (out / (std::string("map_") + stem + ".png")).string(),
                            cfg.zero_tol);
      if (cfg.write_traces && !traces.empty()) {
        std::ofstream os(out / (std::string("trace_") + stem + ".jsonl"));
        for (const IterRecord& it : traces[ti].iters) {
          json jt{{"iter", it.iter},     {"F", it.F},
                  {"f", it.f},           {"l0", it.sparsity},
                  {"step", it.step},     {"branch", step_branch_name(it.branch)}};
          os << jt.dump() << '\n';
        }
      }
    }
  }

  BatchOutcome outcome;
  outcome.summary = cfg.goal.targeted ? aggregate_targeted(records, wall)
                                      : aggregate_nontargeted(records, wall);
  outcome.records = std::move(records);

  if (!cfg.out_dir.empty()) {
    const fs::path out(cfg.out_dir);
    {
      std::ofstream os(out / "summary.json");
      os << summary_to_json(outcome.summary).dump(2) << '\n';
    }
    {
      std::ofstream os(out / "summary.txt");
      os << format_summary_table(outcome.summary);
    }
    {
      std::ofstream os(out / "config.resolved.json");
      os << to_json(cfg).dump(2) << '\n';
    }
  }
  if (traces_out) *traces_out = std::move(traces);
  return outcome;
}

}  // namespace hta
