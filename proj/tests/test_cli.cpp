#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bridgefuse/cli.hpp"
#include "bridgefuse/report.hpp"
#include "bridgefuse/serialize.hpp"

using namespace bridgefuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome Run(std::vector<std::string> args) {
  args.insert(args.begin(), "bridgefuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::Main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bridgefuse_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Digest over every regular file below `dir`, keyed by relative path.
std::string TreeDigest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + ":" + HexDigest(Fnv1a64(Bytes(f))) + "\n";
  return all;
}

std::vector<std::string> Cells(const std::string& row) {
  std::vector<std::string> out;
  std::stringstream in(row);
  std::string cell;
  while (std::getline(in, cell, '|')) {
    const auto b = cell.find_first_not_of(' '), e = cell.find_last_not_of(' ');
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

fs::path WriteConfig(const fs::path& dir, const Json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

Json TinyRunConfig(const std::string& manifest) {
  return {{"label", "tiny"},
          {"data", {{"manifest", manifest}}},
          {"model", {{"d_model", 8}, {"n_heads_self", 2}, {"n_heads_cross", 2}, {"n_bridge_tokens", 3}}},
          {"train", {{"learning_rate", 0.01}, {"epochs", 2}, {"batch_size", 8}, {"seeds", {1}}}},
          {"rmm", {{"enabled", true}}},
          {"folds", {0, 1}}};
}

}  // namespace

TEST_CASE("gen-synth") {
  const fs::path dir = TempDir("gen");
  const Outcome r = Run({"gen-synth", "--n", "500", "--d", "16", "--seed", "1", "--out", (dir / "a").string()});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(r.out.find("wrote 500 records") != std::string::npos);
  CHECK(r.out.find("speakers: 10 (0:50 1:50 2:50 3:50 4:50 5:50 6:50 7:50 8:50 9:50)") != std::string::npos);
  CHECK(LoadManifest(dir / "a" / "manifest.jsonl").size() == 500);

  REQUIRE(Run({"gen-synth", "--n", "500", "--d", "16", "--seed", "1", "--out", (dir / "b").string()}).code == 0);
  CHECK(TreeDigest(dir / "a") == TreeDigest(dir / "b"));
  REQUIRE(Run({"gen-synth", "--n", "500", "--d", "16", "--seed", "2", "--out", (dir / "c").string()}).code == 0);
  CHECK(TreeDigest(dir / "a") != TreeDigest(dir / "c"));

  CHECK(Run({"gen-synth", "--n", "55", "--out", (dir / "bad").string()}).code == cli::kExitConfig);
  CHECK(Run({"gen-synth", "--bogus"}).code == cli::kExitUsage);
  CHECK(Run({}).code == cli::kExitUsage);
}

TEST_CASE("train, evaluate and report") {
  const fs::path dir = TempDir("train");
  REQUIRE(Run({"gen-synth", "--n", "100", "--d", "8", "--max-len", "6", "--out", (dir / "data").string()}).code ==
          0);
  const std::string manifest = (dir / "data" / "manifest.jsonl").string();
  const std::string manifest_before = Bytes(manifest);
  const fs::path config = WriteConfig(dir, TinyRunConfig(manifest));

  const fs::path run = dir / "run";
  const Outcome t = Run({"train", "--config", config.string(), "--out", run.string()});
  INFO(t.err);
  REQUIRE(t.code == cli::kExitOk);
  CHECK(t.out.find("| WAR") != std::string::npos);
  for (const char* f : {"config.json", "report.json", "report.txt", "seed_1/fold_0/best.ckpt",
                        "seed_1/fold_1/fold_result.json", "seed_1/fold_1/state.ckpt"})
    CHECK(fs::exists(run / f));
  CHECK(Bytes(manifest) == manifest_before);

  // Same config into a fresh directory: identical bytes.
  const fs::path run2 = dir / "run2";
  REQUIRE(Run({"train", "--config", config.string(), "--out", run2.string()}).code == 0);
  CHECK(Bytes(run / "report.json") == Bytes(run2 / "report.json"));
  CHECK(Bytes(run / "seed_1/fold_0/best.ckpt") == Bytes(run2 / "seed_1/fold_0/best.ckpt"));
  CHECK(Bytes(run / "seed_1/fold_1/state.ckpt") == Bytes(run2 / "seed_1/fold_1/state.ckpt"));

  // The best checkpoint reproduces the recorded test metrics.
  const Json fold = Json::parse(Bytes(run / "seed_1/fold_1/fold_result.json"));
  const int test_speaker = MakeFoldPlan().folds[1].test_speaker;
  const fs::path eval_json = dir / "eval.json";
  const Outcome e = Run({"evaluate", "--checkpoint", (run / "seed_1/fold_1/best.ckpt").string(), "--data", manifest,
                         "--speakers", std::to_string(test_speaker), "--batch-size", "8", "--json",
                         eval_json.string()});
  INFO(e.err);
  REQUIRE(e.code == cli::kExitOk);
  const Json got = Json::parse(Bytes(eval_json));
  CHECK(got.at("war") == fold.at("test").at("war"));
  CHECK(got.at("uar") == fold.at("test").at("uar"));
  CHECK(got.at("ccc_valence") == fold.at("test").at("ccc_valence"));
  CHECK(got.at("ccc_arousal") == fold.at("test").at("ccc_arousal"));
  CHECK(got.at("confusion") == fold.at("test").at("confusion"));
  // Twice in a row: identical.
  CHECK(Run({"evaluate", "--checkpoint", (run / "seed_1/fold_1/best.ckpt").string(), "--data", manifest,
             "--speakers", std::to_string(test_speaker), "--batch-size", "8"})
            .out == e.out);
  const Outcome e1 = Run({"evaluate", "--checkpoint", (run / "seed_1/fold_1/best.ckpt").string(), "--data", manifest,
                          "--batch-size", "1"});
  const Outcome e16 = Run({"evaluate", "--checkpoint", (run / "seed_1/fold_1/best.ckpt").string(), "--data", manifest,
                           "--batch-size", "16"});
  const Json j1 = Json::parse(e1.out), j16 = Json::parse(e16.out);
  CHECK(j1.at("war") == j16.at("war"));
  CHECK(std::abs(j1.at("ccc_valence").get<double>() - j16.at("ccc_valence").get<double>()) < 1e-9);
  CHECK(std::abs(j1.at("ccc_arousal").get<double>() - j16.at("ccc_arousal").get<double>()) < 1e-9);

  // Single task: dimensional cells are "-".
  const fs::path disc = dir / "disc";
  const Outcome d = Run({"train", "--config", config.string(), "--out", disc.string(), "--single-task", "disc",
                         "--label", "disc-only", "--folds", "0"});
  INFO(d.err);
  REQUIRE(d.code == 0);
  const std::string last_row = d.out.substr(d.out.find("disc-only"));
  const std::string row = last_row.substr(0, last_row.find('\n'));
  const auto cells = Cells(row);
  REQUIRE(cells.size() == 11);
  CHECK(cells[9] == "-");
  CHECK(cells[10] == "-");
  CHECK(cells[8].back() == '%');

  // Report over both runs, summary round trip.
  const fs::path summary = dir / "summary.json";
  const Outcome rep = Run({"report", run.string(), disc.string(), "--summary", summary.string()});
  REQUIRE(rep.code == 0);
  CHECK(rep.out.find("tiny") != std::string::npos);
  CHECK(rep.out.find("disc-only") != std::string::npos);
  const Outcome again = Run({"report", "--from-summary", summary.string()});
  REQUIRE(again.code == 0);
  CHECK(again.out == rep.out);

  // Resume: an existing run with the same config completes without retraining.
  CHECK(Run({"train", "--config", config.string(), "--out", run.string()}).code == 0);
  CHECK(Bytes(run / "report.json") == Bytes(run2 / "report.json"));
  // A different config into the same directory is refused.
  CHECK(Run({"train", "--config", config.string(), "--out", run.string(), "--epochs", "3"}).code ==
        cli::kExitConfig);
}

TEST_CASE("exit codes") {
  const fs::path dir = TempDir("codes");
  REQUIRE(Run({"gen-synth", "--n", "20", "--d", "8", "--out", (dir / "data").string()}).code == 0);
  const std::string manifest = (dir / "data" / "manifest.jsonl").string();

  Json unknown = TinyRunConfig(manifest);
  unknown["model"]["n_heads"] = 2;
  CHECK(Run({"train", "--config", WriteConfig(dir, unknown).string(), "--out", (dir / "r1").string()}).code ==
        cli::kExitConfig);
  CHECK(Run({"train", "--config", (dir / "nope.json").string()}).code == cli::kExitConfig);
  CHECK(Run({"train", "--config", WriteConfig(dir, TinyRunConfig(manifest)).string(), "--single-task", "both",
             "--out", (dir / "r2").string()})
            .code == cli::kExitConfig);

  Json missing = TinyRunConfig((dir / "absent.jsonl").string());
  CHECK(Run({"train", "--config", WriteConfig(dir, missing).string(), "--out", (dir / "r3").string()}).code ==
        cli::kExitData);
  Json wide = TinyRunConfig(manifest);
  wide["model"]["d_model"] = 16;
  CHECK(Run({"train", "--config", WriteConfig(dir, wide).string(), "--out", (dir / "r4").string()}).code ==
        cli::kExitData);

  CHECK(Run({"evaluate", "--checkpoint", (dir / "none.ckpt").string(), "--data", manifest}).code == cli::kExitData);
  CHECK(Run({"report", (dir / "r4").string()}).code == cli::kExitData);
  CHECK(Run({"report"}).code == cli::kExitUsage);
}

TEST_CASE("table formatting") {
  CHECK(FormatPercent({0.7468, 0.0016}, 3) == "74.68 ± 0.16%");
  CHECK(FormatPercent({0.7468, 0.0016}, 1) == "74.68%");
  CHECK(FormatCcc({0.748, 0.05}, 3) == ".748 ± .050");
  CHECK(FormatCcc({-0.25, 0.0}, 3) == "-.250 ± .000");

  ReportRow full;
  full.label = "full";
  full.self_attention = full.cross_attention = full.bridge_tokens = full.rmm = true;
  full.categorical = full.dimensional = true;
  full.n_seeds = 3;
  full.uar = {0.7579, 0.0037};
  full.war = {0.7438, 0.0033};
  full.ccc_valence = MetricSummary{0.744, 0.02};
  full.ccc_arousal = MetricSummary{0.679, 0.04};
  ReportRow con = full;
  con.label = "con";
  con.categorical = false;
  const std::vector<ReportRow> rows{full, con};
  const std::string table = RenderTable(rows);
  CHECK(table.find("Model | S/A | CR/A | Q | RMM | Disc | Con") == 0);
  CHECK(table.find("75.79 ± 0.37%") != std::string::npos);
  CHECK(table.find(".744 ± .020") != std::string::npos);
  // The con row has no categorical metrics.
  const std::string con_row = table.substr(table.find("con "));
  const auto cells = Cells(con_row.substr(0, con_row.find('\n')));
  REQUIRE(cells.size() == 11);
  CHECK(cells[7] == "-");
  CHECK(cells[8] == "-");
  CHECK(cells[9] == ".744 ± .020");

  const auto back = SummaryFromJson(SummaryToJson(rows));
  CHECK(RenderTable(back) == table);
}
