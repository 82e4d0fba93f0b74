// Command-line front end: train the built-in classifier, attack single
// images, run batch sweeps, render perturbation position maps, and
// re-summarize report directories.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "hta/batch.hpp"
#include "hta/config.hpp"
#include "hta/homotopy.hpp"
#include "hta/image_io.hpp"
#include "hta/render.hpp"
#include "hta/tensor_io.hpp"
#include "hta/train.hpp"

namespace fs = std::filesystem;
using hta::json;

namespace {

hta::Tensor load_image_any(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".tsr")
    return hta::read_tsr(path);
  return hta::read_png(path);
}

hta::SparsityConfig parse_sparsity_flag(const std::string& s) {
  hta::SparsityConfig out;
  if (s == "element") return out;
  if (s.rfind("group:", 0) == 0) {
    out.mode = hta::SparsityMode::kGroup;
    out.tile = static_cast<std::size_t>(std::stoul(s.substr(6)));
    if (out.tile == 0) throw CLI::ValidationError("--sparsity", "tile must be >= 1");
    return out;
  }
  throw CLI::ValidationError("--sparsity", "expected 'element' or 'group:TILE'");
}

void add_param_flags(CLI::App* cmd, hta::HomotopyParams& hp,
                     hta::NmapgParams& np, hta::PostAttackParams& pp,
                     std::string& push_norm) {
  cmd->add_option("--c", hp.c, "initial-weight multiplier");
  cmd->add_option("--v", hp.v, "sparsity growth budget per stage");
  cmd->add_option("--beta", hp.beta, "coarse weight-search increment");
  cmd->add_option("--gamma", hp.gamma, "trigger threshold");
  cmd->add_option("--lambda-decay", hp.lambda_decay, "outer weight decay factor");
  cmd->add_option("--fine-decay", hp.fine_decay, "fine-phase decrease factor");
  cmd->add_option("--v-small", hp.v_small, "temporary budget while triggered");
  cmd->add_option("--max-outer", hp.max_outer, "outer iteration cap");
  cmd->add_option("--eta", np.eta, "nonmonotone averaging weight");
  cmd->add_option("--descent-delta", np.descent_delta, "sufficient-descent coefficient");
  cmd->add_option("--rho", np.rho, "line-search shrink factor");
  cmd->add_option("--max-inner", np.max_iter, "inner iterations per stage");
  cmd->add_option("--step-init", np.step_init, "fallback step length");
  cmd->add_option("--w1", pp.w1, "post-attack loss weight");
  cmd->add_option("--w2", pp.w2, "post-attack norm weight");
  cmd->add_option("--push-norm", push_norm, "post-attack norm: 1, 2, or inf");
  cmd->add_option("--step-size", pp.step_size, "post-attack step size");
  cmd->add_option("--iters-per-l0", pp.iters_per_l0, "post-attack iterations per nonzero");
}

int cmd_train(const std::string& arch, std::uint64_t seed, std::size_t epochs,
              std::uint64_t data_seed, std::size_t train_per_class,
              std::size_t test_per_class, double lr, const std::string& out,
              const std::string& dump_sample) {
  hta::SyntheticSpec spec;
  spec.seed = data_seed;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  hta::SyntheticDataset data(spec);

  hta::TrainConfig cfg;
  cfg.arch = arch == "conv" ? hta::Arch::kSmallConv : hta::Arch::kMlp;
  cfg.seed = seed;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  hta::TrainResult result = hta::train_model(data, cfg);
  hta::save_model(out, result.model);
  std::cout << "trained " << arch << " (seed " << seed << ", " << epochs
            << " epochs): test accuracy " << result.test_accuracy
            << ", final train loss " << result.final_train_loss << "\n"
            << "saved to " << out << "\n";
  if (!dump_sample.empty()) {
    // first correctly-classified test image, handy as an attack input
    for (const hta::LabeledImage& s : data.test()) {
      if (hta::predict_class(result.model, s.image) != s.label) continue;
      hta::write_png(dump_sample, s.image);
      std::cout << "sample image (label " << s.label << ") written to "
                << dump_sample << "\n";
      break;
    }
  }
  return 0;
}

int cmd_attack(const std::string& model_path, const std::string& image_path,
               int target, bool nontargeted, double kappa, int label_override,
               double epsilon, const std::string& mode_str,
               const std::string& sparsity_str, const std::string& out_dir,
               bool trace, bool render, const hta::HomotopyParams& hp,
               const hta::NmapgParams& np, hta::PostAttackParams pp,
               const std::string& push_norm) {
  pp.p = hta::push_norm_from_string(push_norm);
  const hta::Model model = hta::load_model(model_path);
  const hta::Tensor x0 = load_image_any(image_path);

  hta::AttackProblem prob;
  prob.model = &model;
  prob.x0 = x0;
  prob.epsilon = epsilon;
  const hta::SparsityConfig sparsity = parse_sparsity_flag(sparsity_str);
  prob.sparsity = sparsity.mode;
  std::optional<hta::GroupPartition> partition;
  if (sparsity.mode == hta::SparsityMode::kGroup) {
    partition.emplace(hta::build_tile_partition(x0.shape(), sparsity.tile));
    prob.partition = &*partition;
  }
  const int y0 = label_override >= 0 ? label_override
                                     : hta::predict_class(model, x0);
  if (nontargeted) {
    prob.goal = hta::AttackGoal::nontargeted(y0, kappa);
  } else {
    if (target < 0)
      throw CLI::ValidationError("--target", "required unless --nontargeted");
    prob.goal = hta::AttackGoal::targeted(target);
  }
  const hta::AttackMode mode = hta::attack_mode_from_string(mode_str);

  hta::NmapgTrace trace_data;
  hta::AttackReport report = hta::homotopy_attack(
      prob, hp, np, pp, mode, trace ? &trace_data : nullptr);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  hta::AttackRecord rec;
  rec.target = nontargeted ? -1 : target;
  rec.true_label = y0;
  rec.report = report; // copies; report.delta still needed below

  hta::RunConfig ctx; // reused for record serialization + resolved config
  ctx.model_path = model_path;
  ctx.goal.targeted = !nontargeted;
  if (!nontargeted) ctx.goal.targets = {target};
  ctx.goal.kappa = kappa;
  ctx.epsilon = epsilon;
  ctx.sparsity = sparsity;
  ctx.mode = mode;
  ctx.images = 1;
  ctx.homotopy = hp;
  ctx.nmapg = np;
  ctx.post_attack = pp;
  ctx.out_dir = out_dir;

  {
    std::ofstream os(out / "report.json");
    os << hta::record_to_json(rec, ctx).dump() << '\n';
  }
  hta::write_tsr((out / "delta.tsr").string(), report.delta);
  {
    std::ofstream os(out / "config.resolved.json");
    os << hta::to_json(ctx).dump(2) << '\n';
  }
  if (trace) {
    std::ofstream os(out / "trace.jsonl");
    for (const hta::IterRecord& it : trace_data.iters) {
      json jt{{"iter", it.iter},   {"F", it.F},
              {"f", it.f},         {"l0", it.sparsity},
              {"step", it.step},   {"branch", hta::step_branch_name(it.branch)}};
      os << jt.dump() << '\n';
    }
  }
  if (render && x0.shape().size() == 3 && x0.shape()[2] == 3) {
    hta::render_position_map(report.delta, (out / "position.png").string());
    hta::Tensor adv = hta::add(x0, report.delta);
    hta::write_png((out / "adversarial.png").string(), adv);
  }

  std::cout << (report.success ? "SUCCESS" : "FAILED") << ": predicted class "
            << report.predicted_class << ", l0 " << report.norms.l0 << ", l1 "
            << report.norms.l1 << ", l2 " << report.norms.l2 << ", linf "
            << report.norms.linf << ", outer iterations "
            << report.outer_iterations << ", post-attack invocations "
            << report.post_attack_invocations << ", wall "
            << report.wall_seconds << " s\n"
            << "artifacts in " << out_dir << "\n";
  return report.success ? 0 : 1;
}

int cmd_batch(const std::string& config_path, const std::string& out_override,
              std::size_t parallelism_override) {
  std::ifstream is(config_path);
  if (!is) throw std::runtime_error("cannot open config: " + config_path);
  json j = json::parse(is);
  hta::RunConfig cfg = hta::parse_run_config(j);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (parallelism_override > 0) cfg.parallelism = parallelism_override;
  hta::BatchOutcome outcome = hta::run_batch(cfg);
  std::cout << hta::format_summary_table(outcome.summary)
            << "wall time " << outcome.summary.wall_seconds << " s\n"
            << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_render(const std::string& delta_path, const std::string& out_path,
               double zero_tol) {
  hta::render_position_map(hta::read_tsr(delta_path), out_path, zero_tol);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  std::vector<hta::AttackRecord> records;
  bool targeted = false;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    // batch records (report_imgNNNN_*.json) and single-attack report.json
    if (name.rfind("report", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream is(f);
    json j = json::parse(is);
    hta::AttackRecord rec = hta::record_from_json(j);
    if (rec.target >= 0) targeted = true;
    records.push_back(std::move(rec));
  }
  if (records.empty()) {
    std::cout << "no report_*.json records in " << dir << "\n";
    return 1;
  }
  const hta::BatchSummary summary = targeted
                                        ? hta::aggregate_targeted(records)
                                        : hta::aggregate_nontargeted(records);
  std::cout << hta::format_summary_table(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse box-bounded adversarial perturbations via a homotopy "
               "continuation attack"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train the built-in classifier");
  std::string arch = "mlp";
  std::uint64_t seed = 0, data_seed = 0;
  std::size_t epochs = 3, train_per_class = 500, test_per_class = 100;
  double lr = 0.1;
  std::string train_out = "model.mdl", dump_sample;
  train->add_option("--arch", arch, "mlp or conv")
      ->check(CLI::IsMember({"mlp", "conv"}));
  train->add_option("--seed", seed, "trainer seed");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--data-seed", data_seed, "synthetic dataset seed");
  train->add_option("--train-per-class", train_per_class, "training images per class");
  train->add_option("--test-per-class", test_per_class, "test images per class");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--out", train_out, "output model path")->required();
  train->add_option("--dump-sample", dump_sample,
                    "also write one correctly-classified test image as PNG");

  // attack
  auto* attack = app.add_subcommand("attack", "attack a single image");
  std::string model_path, image_path, attack_out = "attack_out";
  std::string mode_str = "full", sparsity_str = "element", push_norm = "2";
  int target = -1, label_override = -1;
  bool nontargeted = false, trace = false, render = false;
  double epsilon = 0.05, kappa = 0.0;
  hta::HomotopyParams hp;
  hta::NmapgParams np;
  hta::PostAttackParams pp;
  attack->add_option("--model", model_path, "model file")->required();
  attack->add_option("--image", image_path, "benign image (.png or .tsr)")->required();
  attack->add_option("--target", target, "target class (targeted attack)");
  attack->add_flag("--nontargeted", nontargeted, "nontargeted attack");
  attack->add_option("--kappa", kappa, "nontargeted confidence margin");
  attack->add_option("--label", label_override,
                     "true label (defaults to the model's prediction)");
  attack->add_option("--epsilon", epsilon, "perturbation magnitude bound");
  attack->add_option("--mode", mode_str, "full, pure_homotopy, or nmapg_only")
      ->check(CLI::IsMember({"full", "pure_homotopy", "nmapg_only"}));
  attack->add_option("--sparsity", sparsity_str, "element or group:TILE");
  attack->add_option("--out", attack_out, "output directory");
  attack->add_flag("--trace", trace, "write the per-iteration solver trace");
  attack->add_flag("--render", render, "write position map and adversarial PNG");
  add_param_flags(attack, hp, np, pp, push_norm);

  // batch
  auto* batch = app.add_subcommand("batch", "run a config-driven batch");
  std::string config_path, batch_out;
  std::size_t parallelism_override = 0;
  batch->add_option("--config", config_path, "batch config (JSON)")->required();
  batch->add_option("--out", batch_out, "override the output directory");
  batch->add_option("--parallelism", parallelism_override, "override worker count");

  // render
  auto* render_cmd = app.add_subcommand("render", "render a perturbation position map");
  std::string delta_path, render_out = "position.png";
  double zero_tol = hta::kZeroTol;
  render_cmd->add_option("--delta", delta_path, "perturbation tensor (.tsr)")->required();
  render_cmd->add_option("--out", render_out, "output PNG path");
  render_cmd->add_option("--zero-tol", zero_tol, "nonzero threshold");

  // report
  auto* report_cmd = app.add_subcommand("report", "summarize a report directory");
  std::string report_dir;
  report_cmd->add_option("--dir", report_dir, "directory of report_*.json files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(arch, seed, epochs, data_seed, train_per_class,
                       test_per_class, lr, train_out, dump_sample);
    if (attack->parsed())
      return cmd_attack(model_path, image_path, target, nontargeted, kappa,
                        label_override, epsilon, mode_str, sparsity_str,
                        attack_out, trace, render, hp, np, pp, push_norm);
    if (batch->parsed())
      return cmd_batch(config_path, batch_out, parallelism_override);
    if (render_cmd->parsed())
      return cmd_render(delta_path, render_out, zero_tol);
    if (report_cmd->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
