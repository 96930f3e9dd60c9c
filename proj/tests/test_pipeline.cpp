#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "badpix/pipeline.hpp"

using namespace badpix;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string tiny_config(const std::string& out_dir) {
  return "dataset.width = 64\n"
         "dataset.height = 64\n"
         "dataset.train_frames = 1\n"
         "dataset.test_frames = 1\n"
         "detector.tile = 16\n"
         "detector.base_channels = 4\n"
         "detector.depth = 2\n"
         "detector.epochs = 2\n"
         "corrector.samples = 100\n"
         "corrector.epochs = 2\n"
         "corrector.neighbor_errors = 0\n"
         "seeds = 1\n"
         "output.dir = " + out_dir + "\n";
}

}  // namespace

TEST_CASE("strategy flips above the 40% threshold", "[pipeline]") {
  REQUIRE(select_strategy(0.20, 0.40) == Strategy::mlp);
  REQUIRE(select_strategy(0.40, 0.40) == Strategy::mlp);  // boundary stays mlp
  REQUIRE(select_strategy(0.41, 0.40) == Strategy::ae);
  REQUIRE(select_strategy(0.50, 0.40) == Strategy::ae);
  REQUIRE_THROWS_AS(select_strategy(1.2, 0.4), DataError);
}

TEST_CASE("config parsing: keys, comments, lists", "[pipeline]") {
  const KvConfig kv = KvConfig::from_text(
      "# full line comment\n"
      "dataset.width = 128   # trailing comment\n"
      "seeds = 3, 5, 8\n"
      "defect.rate = 0.25\n"
      "pipeline.train = false\n");
  REQUIRE(kv.get_int("dataset.width", 0) == 128);
  REQUIRE(kv.get_list_u64("seeds", {}) ==
          std::vector<std::uint64_t>{3, 5, 8});
  REQUIRE(kv.get_double("defect.rate", 0) == Approx(0.25));
  REQUIRE(kv.get_bool("pipeline.train", true) == false);
  REQUIRE(kv.get("missing", "fallback") == "fallback");
}

TEST_CASE("config parsing: malformed input is a config error", "[pipeline]") {
  REQUIRE_THROWS_AS(KvConfig::from_text("not a key value line\n"), ConfigError);
  const KvConfig kv = KvConfig::from_text("dataset.width = twelve\n");
  REQUIRE_THROWS_AS(kv.get_int("dataset.width", 0), ConfigError);
}

TEST_CASE("config digest is canonical", "[pipeline]") {
  const KvConfig a = KvConfig::from_text("b = 2\na = 1\n");
  const KvConfig b = KvConfig::from_text("a = 1\nb = 2\n");
  REQUIRE(a.digest() == b.digest());
  const KvConfig c = KvConfig::from_text("a = 1\nb = 3\n");
  REQUIRE(a.digest() != c.digest());
}

TEST_CASE("experiment config validation", "[pipeline]") {
  REQUIRE_THROWS_AS(
      ExperimentConfig::from(KvConfig::from_text("pipeline.strategy_threshold = 1.5\n")),
      ConfigError);
  REQUIRE_THROWS_AS(ExperimentConfig::from(KvConfig::from_text("seeds =\n")),
                    ConfigError);
  REQUIRE_THROWS_AS(
      ExperimentConfig::from(KvConfig::from_text("defect.delta = 0\n")),
      ConfigError);
  REQUIRE_THROWS_AS(
      ExperimentConfig::from(KvConfig::from_text("dataset.kind = directory\n")),
      ConfigError);
}

TEST_CASE("metrics serialization: markers and column order", "[pipeline]") {
  MetricsRow row;
  row.run_id = "r1";
  row.error_rate = 0.01;
  row.delta = 0.7;
  row.n_frames = 3;
  row.strategy = "mlp";
  row.recall = 0.5;
  // precision/nmse left undefined, psnr infinite
  row.psnr_infinite = true;
  const std::string csv = metrics_row_csv(row);
  REQUIRE(csv == "r1,0.010000,0.700000,3,mlp,0.500000,undefined,undefined,inf");
  const std::string jsonl = metrics_row_jsonl(row);
  REQUIRE(jsonl.find("\"precision\":\"undefined\"") != std::string::npos);
  REQUIRE(jsonl.find("\"psnr\":\"inf\"") != std::string::npos);
  REQUIRE(jsonl.find("\"run_id\":\"r1\"") == 1);  // leads the object
}

TEST_CASE("report emission is byte-stable and round-trips", "[pipeline]") {
  const std::string dir =
      (fs::temp_directory_path() / "badpix_report_test").string();
  fs::create_directories(dir);
  RunReport rep;
  rep.config_digest = 0xabcdef12345678ull;
  MetricsRow row;
  row.run_id = "a";
  row.error_rate = 0.2;
  row.delta = 0.7;
  row.n_frames = 1;
  row.strategy = "ae";
  row.recall = 0.93;
  row.precision = 0.87;
  row.nmse = 0.0123456789;
  row.psnr = 31.25;
  row.extras.emplace_back("estimated_rate", 0.21);
  rep.rows.push_back(row);

  const std::string j1 = dir + "/r1.json";
  const std::string j2 = dir + "/r2.json";
  emit_report_json(rep, j1);
  emit_report_json(rep, j2);
  REQUIRE(read_file(j1) == read_file(j2));

  const std::string c1 = dir + "/r1.csv";
  emit_report_csv(rep, c1);
  const std::string csv = read_file(c1);
  REQUIRE(csv.find(metrics_csv_header()) == 0);

  // a generic JSON parser preserves all numeric fields
  const auto parsed = nlohmann::json::parse(read_file(j1));
  REQUIRE(parsed["rows"].size() == 1);
  REQUIRE(parsed["rows"][0]["nmse"].get<double>() == Approx(0.012346).margin(1e-9));
  REQUIRE(parsed["rows"][0]["psnr"].get<double>() == Approx(31.25));
  REQUIRE(parsed["rows"][0]["estimated_rate"].get<double>() == Approx(0.21));
  REQUIRE(parsed["config_digest"].get<std::string>() == "0x00abcdef12345678");

  // empty report: header-only csv
  RunReport empty;
  const std::string c2 = dir + "/empty.csv";
  emit_report_csv(empty, c2);
  REQUIRE(read_file(c2) == metrics_csv_header() + "\n");
}

TEST_CASE("report refuses to cite missing artifacts", "[pipeline]") {
  RunReport rep;
  rep.artifacts.push_back("/nonexistent/badpix_artifact.bin");
  REQUIRE_THROWS_AS(emit_report_json(rep, "/tmp/badpix_bad_report.json"),
                    DataError);
}

TEST_CASE("pipeline: identical config and seed give identical reports",
          "[pipeline]") {
  const std::string d1 =
      (fs::temp_directory_path() / "badpix_pipe_a").string();
  const std::string d2 =
      (fs::temp_directory_path() / "badpix_pipe_b").string();
  fs::remove_all(d1);
  fs::remove_all(d2);
  auto cfg1 = ExperimentConfig::from(KvConfig::from_text(tiny_config(d1)));
  auto cfg2 = ExperimentConfig::from(KvConfig::from_text(tiny_config(d2)));
  run_pipeline(cfg1);
  run_pipeline(cfg2);
  REQUIRE(read_file(d1 + "/metrics.csv") == read_file(d2 + "/metrics.csv"));
  REQUIRE(read_file(d1 + "/metrics.jsonl") == read_file(d2 + "/metrics.jsonl"));
  // artifact paths differ between the two dirs, rows must not
  const auto ja = nlohmann::json::parse(read_file(d1 + "/report.json"));
  const auto jb = nlohmann::json::parse(read_file(d2 + "/report.json"));
  REQUIRE(ja["rows"] == jb["rows"]);
}

TEST_CASE("pipeline: zero-defect run degrades cleanly", "[pipeline]") {
  const std::string dir =
      (fs::temp_directory_path() / "badpix_pipe_zero").string();
  fs::remove_all(dir);
  std::string text = tiny_config(dir);
  text += "defect.rate = 0\n";
  auto cfg = ExperimentConfig::from(KvConfig::from_text(text));
  const RunReport rep = run_pipeline(cfg);
  REQUIRE(rep.rows.size() == 1);
  REQUIRE(rep.rows[0].strategy == "mlp");  // near-zero estimate routes to mlp
  REQUIRE_FALSE(rep.rows[0].nmse.has_value());  // undefined marker
  REQUIRE_FALSE(rep.rows[0].recall.has_value());
}

TEST_CASE("pipeline: training disabled without checkpoints is a config error",
          "[pipeline]") {
  const std::string dir =
      (fs::temp_directory_path() / "badpix_pipe_nockpt").string();
  fs::remove_all(dir);
  std::string text = tiny_config(dir);
  text += "pipeline.train = false\n";
  auto cfg = ExperimentConfig::from(KvConfig::from_text(text));
  try {
    run_pipeline(cfg);
    FAIL("expected config error");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("detect") != std::string::npos);
  }
}

TEST_CASE("pipeline: forced baseline strategies run end to end", "[pipeline]") {
  const std::string dir =
      (fs::temp_directory_path() / "badpix_pipe_median").string();
  fs::remove_all(dir);
  std::string text = tiny_config(dir);
  text += "pipeline.strategy = median\n";
  auto cfg = ExperimentConfig::from(KvConfig::from_text(text));
  const RunReport rep = run_pipeline(cfg);
  REQUIRE(rep.rows[0].strategy == "median");
  REQUIRE(rep.rows[0].nmse.has_value());
}
