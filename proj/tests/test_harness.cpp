#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hta/batch.hpp"
#include "hta/config.hpp"
#include "hta/image_io.hpp"
#include "hta/partition.hpp"
#include "hta/render.hpp"
#include "hta/rng.hpp"
#include "hta/train.hpp"
#include "helpers.hpp"

using namespace hta;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hta_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// small trained model shared across the batch tests
const std::string& tiny_model_path() {
  static std::string path = [] {
    SyntheticSpec spec;
    spec.train_per_class = 60;
    spec.test_per_class = 20;
    SyntheticDataset data(spec);
    TrainConfig cfg;
    cfg.epochs = 2;
    const TrainResult r = train_model(data, cfg);
    const fs::path p = temp_dir("model") / "tiny.mdl";
    save_model(p.string(), r.model);
    return p.string();
  }();
  return path;
}

}  // namespace

TEST_CASE("tile partition shapes", "[harness]") {
  const GroupPartition p3 = build_tile_partition({12, 12, 3}, 3);
  CHECK(p3.group_count() == 16);
  for (const auto& g : p3.groups()) CHECK(g.size() == 27);

  const GroupPartition p1 = build_tile_partition({12, 12, 3}, 1);
  CHECK(p1.group_count() == 144);
  for (const auto& g : p1.groups()) CHECK(g.size() == 3);

  // ragged edges: 12 = 5 + 5 + 2 per axis -> 9 groups, full cover
  const GroupPartition p5 = build_tile_partition({12, 12, 3}, 5);
  CHECK(p5.group_count() == 9);
  std::vector<char> seen(12 * 12 * 3, 0);
  std::size_t covered = 0;
  for (const auto& g : p5.groups())
    for (std::size_t i : g) {
      REQUIRE(seen[i] == 0);
      seen[i] = 1;
      ++covered;
    }
  CHECK(covered == 12 * 12 * 3);

  CHECK_THROWS_AS(build_tile_partition({12, 12, 3}, 13), std::invalid_argument);
  CHECK_THROWS_AS(build_tile_partition({12, 12}, 3), std::invalid_argument);
}

TEST_CASE("position map colors follow the channel pattern", "[harness]") {
  Tensor delta(Shape{2, 4, 3});
  // pixel (0,0): all channels -> white; (0,1): R+B -> magenta;
  // (0,2): G only -> green; (0,3): nothing -> black
  delta[(0 * 4 + 0) * 3 + 0] = 0.05;
  delta[(0 * 4 + 0) * 3 + 1] = -0.02;
  delta[(0 * 4 + 0) * 3 + 2] = 0.01;
  delta[(0 * 4 + 1) * 3 + 0] = 0.05;
  delta[(0 * 4 + 1) * 3 + 2] = 0.05;
  delta[(0 * 4 + 2) * 3 + 1] = -0.05;
  const Tensor map = position_map(delta);
  CHECK(map[(0 * 4 + 0) * 3 + 0] == 1.0);
  CHECK(map[(0 * 4 + 0) * 3 + 1] == 1.0);
  CHECK(map[(0 * 4 + 0) * 3 + 2] == 1.0);
  CHECK(map[(0 * 4 + 1) * 3 + 0] == 1.0);
  CHECK(map[(0 * 4 + 1) * 3 + 1] == 0.0);
  CHECK(map[(0 * 4 + 1) * 3 + 2] == 1.0);
  CHECK(map[(0 * 4 + 2) * 3 + 1] == 1.0);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(map[(0 * 4 + 3) * 3 + c] == 0.0);
    CHECK(map[(1 * 4 + 0) * 3 + c] == 0.0);
  }
  CHECK_THROWS_AS(position_map(Tensor(Shape{2, 2})), std::invalid_argument);
  CHECK_THROWS_AS(position_map(Tensor(Shape{2, 2, 4})), std::invalid_argument);
}

TEST_CASE("all 8 channel patterns map to the 8 colors", "[harness]") {
  for (unsigned pattern = 0; pattern < 8; ++pattern) {
    Tensor delta(Shape{1, 1, 3});
    for (unsigned c = 0; c < 3; ++c)
      if (pattern & (1u << c)) delta[c] = 0.03;
    const Tensor map = position_map(delta);
    for (unsigned c = 0; c < 3; ++c)
      REQUIRE(map[c] == ((pattern & (1u << c)) ? 1.0 : 0.0));
  }
}

TEST_CASE("png byte scaling and round trip", "[harness]") {
  const fs::path dir = temp_dir("png");
  Tensor t(Shape{5, 7, 3});
  Rng rng(71);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<double>(rng.below(256)) / 255.0;
  t[0] = 1.0;                 // byte 255
  t[1] = 0.0;                 // byte 0
  const fs::path p1 = dir / "a.png";
  write_png(p1.string(), t);
  const Tensor back = read_png(p1.string());
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(back[i] == t[i]);
  // write -> read -> write is byte-identical
  const fs::path p2 = dir / "b.png";
  write_png(p2.string(), back);
  REQUIRE(slurp(p1) == slurp(p2));
}

TEST_CASE("png reader rejects non-png and missing files", "[harness]") {
  const fs::path dir = temp_dir("png_bad");
  const fs::path bad = dir / "bad.png";
  std::ofstream(bad) << "this is not a png";
  CHECK_THROWS_WITH(read_png(bad.string()),
                    Catch::Matchers::ContainsSubstring("not a PNG"));
  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), std::runtime_error);
}

TEST_CASE("config parsing reports field-level diagnostics", "[harness]") {
  json j = {{"model", "m.mdl"},
            {"out", "o"},
            {"epsilon", -1.0},
            {"goal", {{"type", "sideways"}}},
            {"homotopy", {{"gamma", 1.5}}},
            {"nmapg", {{"rho", "fast"}}}};
  try {
    parse_run_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epsilon") != std::string::npos);
    CHECK(msg.find("goal.type") != std::string::npos);
    CHECK(msg.find("gamma") != std::string::npos);
    CHECK(msg.find("nmapg.rho") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config(json{{"out", "o"}}), ConfigError);
}

TEST_CASE("config round trip preserves settings", "[harness]") {
  json j = {{"model", "m.mdl"},
            {"out", "o"},
            {"epsilon", 0.07},
            {"mode", "pure_homotopy"},
            {"images", 3},
            {"sparsity", {{"mode", "group"}, {"tile", 4}}},
            {"goal", {{"type", "nontargeted"}, {"kappa", 0.5}}},
            {"post_attack", {{"p", "inf"}}}};
  const RunConfig cfg = parse_run_config(j);
  CHECK(cfg.epsilon == 0.07);
  CHECK(cfg.mode == AttackMode::kPureHomotopy);
  CHECK(cfg.sparsity.mode == SparsityMode::kGroup);
  CHECK(cfg.sparsity.tile == 4);
  CHECK_FALSE(cfg.goal.targeted);
  CHECK(cfg.goal.kappa == 0.5);
  CHECK(cfg.post_attack.p == PushNorm::kLinf);
  const RunConfig again = parse_run_config(to_json(cfg));
  CHECK(to_json(again

) == to_json(cfg));
}

TEST_CASE("targeted aggregation on hand-built records", "[harness]") {
  // one image, three targets with l0 {3, 5, 10} -> best 3, worst 10, avg 6
  std::vector<AttackRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].image_index = 0;
    recs[i].target = i + 1;
    recs[i].report.success = true;
  }
  recs[0].report.norms = NormReport{3, 0.15, 0.09, 0.05};
  recs[1].report.norms = NormReport{5, 0.25, 0.11, 0.05};
  recs[2].report.norms = NormReport{10, 0.50, 0.16, 0.05};
  const BatchSummary s = aggregate_targeted(recs);
  CHECK(s.images == 1);
  CHECK(s.best.mean_l0 == 3.0);
  CHECK(s.worst.mean_l0 == 10.0);
  CHECK(s.average.mean_l0 == 6.0);
  CHECK(s.best.asr == 100.0);
  CHECK(s.average.asr == 100.0);
  CHECK(s.worst.asr == 100.0);

  SECTION("failures shift the ASRs") {
    recs[2].report.success = false;
    const BatchSummary s2 = aggregate_targeted(recs);
    CHECK(s2.best.asr == 100.0);   // some target succeeded
    CHECK(s2.worst.asr == 0.0);    // not all targets succeeded
    CHECK(s2.average.asr == Catch::Approx(200.0 / 3.0));
    CHECK(s2.best.mean_l0 == 3.0);
    CHECK(s2.worst.mean_l0 == 5.0); // worst over successes only
  }
}

TEST_CASE("single-image nontargeted batch summary", "[harness]") {
  const fs::path out = temp_dir("batch_nt");
  RunConfig cfg;
  cfg.model_path = tiny_model_path();
  cfg.dataset.builtin = true;
  cfg.dataset.builtin_seed = 0;
  cfg.goal.targeted = false;
  cfg.images = 1;
  cfg.out_dir = out.string();
  const BatchOutcome outcome = run_batch(cfg);
  CHECK(outcome.records.size() == 1);
  CHECK((outcome.summary.average.asr == 0.0 || outcome.summary.average.asr == 100.0));
  CHECK(fs::exists(out / "report_img0000_nt.json"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "summary.txt"));
  CHECK(fs::exists(out / "config.resolved.json"));
  CHECK(fs::exists(out / "delta_img0000_nt.tsr"));
}

TEST_CASE("parallel batches reproduce serial results byte for byte", "[harness]") {
  RunConfig base;
  base.model_path = tiny_model_path();
  base.dataset.builtin = true;
  base.goal.targeted = true;
  base.goal.targets = {1, 2, 3};
  base.images = 2;
  base.nmapg.max_iter = 25;

  RunConfig serial = base;
  serial.parallelism = 1;
  serial.out_dir = temp_dir("batch_serial").string();
  RunConfig parallel = base;
  parallel.parallelism = 4;
  parallel.out_dir = temp_dir("batch_parallel").string();

  const BatchOutcome a = run_batch(serial);
  const BatchOutcome b = run_batch(parallel);
  REQUIRE(a.records.size() == b.records.size());
  for (const auto& entry : fs::directory_iterator(serial.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("report_", 0) != 0 && name.rfind("delta_", 0) != 0) continue;
    REQUIRE(slurp(entry.path()) ==
            slurp(fs::path(parallel.out_dir) / name));
  }
  REQUIRE(summary_to_json(a.summary).dump() == summary_to_json(b.summary).dump());
}

TEST_CASE("external datasets load from a labels file", "[harness]") {
  const fs::path dir = temp_dir("ext_data");
  SyntheticSpec spec;
  spec.train_per_class = 1;
  spec.test_per_class = 2;
  SyntheticDataset data(spec);
  std::ofstream labels(dir / "labels.tsv");
  for (int i = 0; i < 3; ++i) {
    const auto& s = data.test()[static_cast<std::size_t>(i)];
    const std::string name = "img" + std::to_string(i) + ".png";
    write_png((dir / name).string(), s.image);
    labels << name << '\t' << s.label << '\n';
  }
  labels << "# comment line\n";
  labels.close();
  const auto loaded = load_external_dataset((dir / "labels.tsv").string());
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].image.shape() == Shape{12, 12, 3});
  CHECK(loaded[1].label == data.test()[1].label);
  // pixels survive quantized round trip
  for (std::size_t i = 0; i < loaded[0].image.size(); ++i) {
    const double q =
        std::lround(std::min(std::max(data.test()[0].image[i], 0.0), 1.0) *
                    255.0) /
        255.0;
    REQUIRE(loaded[0].image[i] == q);
  }
  // malformed line reported with its location
  std::ofstream bad(dir / "bad.tsv");
  bad << "img0.png no-tab-here\n";
  bad.close();
  CHECK_THROWS_WITH(load_external_dataset((dir / "bad.tsv").string()),
                    Catch::Matchers::ContainsSubstring("bad.tsv:1"));
}

TEST_CASE("batch records per-task failures and continues", "[harness]") {
  const fs::path out = temp_dir("batch_fail");
  RunConfig cfg;
  cfg.model_path = tiny_model_path();
  cfg.dataset.builtin = true;
  cfg.goal.targeted = true;
  cfg.goal.targets = {2, 11}; // 11 is out of range for the 10-class model
  cfg.images = 1;
  cfg.nmapg.max_iter = 10;
  cfg.out_dir = out.string();
  const BatchOutcome outcome = run_batch(cfg);
  REQUIRE(outcome.records.size() == 2);
  bool found_error = false;
  for (const auto& r : outcome.records)
    if (!r.error.empty()) {
      found_error = true;
      CHECK(r.target == 11);
      CHECK_FALSE(r.report.success);
    }
  CHECK(found_error);
  // the failed task still produced a record file carrying the error
  std::ifstream is(out / "report_img0000_tgt11.json");
  REQUIRE(is);
  json j = json::parse(is);
  CHECK(j.contains("error"));
}

TEST_CASE("report records round trip through json", "[harness]") {
  AttackRecord rec;
  rec.image_index = 7;
  rec.target = 3;
  rec.true_label = 5;
  rec.report.success = true;
  rec.report.norms = NormReport{4, 0.2, 0.1, 0.05};
  rec.report.outer_iterations = 6;
  rec.report.lambda_path = {0.2, 0.18};
  RunConfig ctx;
  const json j = record_to_json(rec, ctx);
  const AttackRecord back = record_from_json(j);
  CHECK(back.image_index == 7);
  CHECK(back.target == 3);
  CHECK(back.true_label == 5);
  CHECK(back.report.success);
  CHECK(back.report.norms.l0 == 4);
  CHECK(back.report.norms.l1 == 0.2);
  CHECK(back.report.outer_iterations == 6);
}
