#include "bridgefuse/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "bridgefuse/data.hpp"
#include "bridgefuse/report.hpp"
#include "bridgefuse/serialize.hpp"
#include "bridgefuse/training.hpp"

namespace bridgefuse::cli {

namespace fs = std::filesystem;

namespace {

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

fs::path OutputRoot() {
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return root;
  return "runs";
}

struct GenSynthArgs {
  fs::path out;
  SynthSpec spec;
};

int GenSynth(const GenSynthArgs& args, std::ostream& out) {
  try {
    args.spec.Validate();
  } catch (const std::invalid_argument& e) {
    throw Failure(kExitConfig, e.what());
  }
  const fs::path dir = args.out.empty() ? OutputRoot() / ("synth_seed" + std::to_string(args.spec.seed)) : args.out;
  const auto records = GenerateSynthetic(args.spec);
  const fs::path manifest = WriteDataset(dir, records);
  Json anchors = Json::object();
  for (int c = 0; c < kNumEmotions; ++c) {
    const auto& a = kSyntheticAnchors[static_cast<std::size_t>(c)];
    anchors[std::string(EmotionName(static_cast<Emotion>(c)))] = {{"valence", a[0]}, {"arousal", a[1]}};
  }
  WriteTextFile(dir / "synth_spec.json",
                Json{{"spec", ToJson(args.spec)}, {"dimensional_anchors", anchors}}.dump(2) + "\n");

  std::array<int, kNumEmotions> classes{};
  std::map<int, int> speakers;
  for (const auto& r : records) {
    ++classes[static_cast<std::size_t>(r.emotion)];
    ++speakers[r.speaker_id];
  }
  out << "wrote " << records.size() << " records to " << manifest.string() << "\n";
  out << "classes:";
  for (int c = 0; c < kNumEmotions; ++c) out << ' ' << EmotionName(static_cast<Emotion>(c)) << '=' << classes[c];
  out << "\nspeakers: " << speakers.size() << " (";
  bool first = true;
  for (const auto& [id, n] : speakers) {
    out << (first ? "" : " ") << id << ':' << n;
    first = false;
  }
  out << ")\n";
  return kExitOk;
}

struct TrainArgs {
  fs::path config;
  fs::path out;
  std::vector<int> seeds;
  std::vector<int> folds;
  std::string single_task;
  int epochs = 0;
  int jobs = 0;
  std::string label;
};

std::vector<UtteranceRecord> LoadData(const RunConfig& c) {
  try {
    return c.manifest ? LoadManifest(*c.manifest) : GenerateSynthetic(*c.synthetic);
  } catch (const DataError& e) {
    throw Failure(kExitData, e.what());
  }
}

int Train(const TrainArgs& args, std::ostream& out) {
  RunConfig config;
  try {
    config = LoadRunConfig(args.config);
    auto& ex = config.experiment;
    if (!args.seeds.empty()) ex.train.seeds = args.seeds;
    if (!args.folds.empty()) ex.folds = args.folds;
    if (args.epochs > 0) {
      ex.train.epochs_per_fold = args.epochs;
      ex.rmm.total_epochs = args.epochs;
    }
    if (args.jobs > 0) config.jobs = args.jobs;
    if (!args.label.empty()) ex.label = args.label;
    if (!args.out.empty()) config.output_dir = args.out;
    if (args.single_task == "disc") {
      ex.train.weights = {1.0, 0.0, 0.0};
    } else if (args.single_task == "con") {
      ex.train.weights = {0.0, 0.5, 0.5};
    } else if (!args.single_task.empty()) {
      throw ConfigError("--single-task expects disc or con");
    }
    if (config.output_dir.empty()) {
      config.output_dir = OutputRoot() / (ex.label.empty() ? std::string("run") : ex.label);
    }
    config.Validate();
  } catch (const ConfigError& e) {
    throw Failure(kExitConfig, e.what());
  } catch (const std::invalid_argument& e) {
    throw Failure(kExitConfig, e.what());
  }

  const auto data = LoadData(config);
  if (data.empty()) throw Failure(kExitData, "dataset is empty");
  if (data.front().feature_dim() != config.experiment.model.fusion.d_model) {
    throw Failure(kExitData, "feature dim " + std::to_string(data.front().feature_dim()) +
                                 " differs from model.d_model " +
                                 std::to_string(config.experiment.model.fusion.d_model));
  }

  const fs::path run_dir = config.output_dir;
  const Json resolved = ToJson(config);
  Json manifest_digest = nullptr;
  if (config.manifest) manifest_digest = HexDigest(Fnv1a64(ReadTextFile(*config.manifest)));
  // Jobs only affect scheduling, never results.
  Json identity = resolved;
  identity.erase("jobs");
  identity.erase("output_dir");
  const Json run_json = {{"config", identity},
                         {"config_digest", HexDigest(Fnv1a64(identity.dump()))},
                         {"manifest_digest", manifest_digest}};
  const fs::path config_path = run_dir / "config.json";
  if (fs::exists(config_path)) {
    const Json previous = Json::parse(ReadTextFile(config_path));
    if (previous.at("config_digest") != run_json.at("config_digest")) {
      throw Failure(kExitConfig, run_dir.string() + " holds a run with a different configuration");
    }
  } else {
    WriteTextFile(config_path, run_json.dump(2) + "\n");
  }

  ExperimentResult result;
  try {
    result = RunExperiment(data, config.experiment, run_dir, config.jobs);
  } catch (const NumericError& e) {
    throw Failure(kExitNumeric, e.what());
  } catch (const DataError& e) {
    throw Failure(kExitData, e.what());
  }
  const std::vector<ReportRow> rows{RowFromExperiment(result)};
  const std::string table = RenderTable(rows);
  WriteTextFile(run_dir / "report.txt", table);
  out << table;
  out << "run directory: " << run_dir.string() << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  fs::path checkpoint;
  fs::path data;
  std::vector<int> speakers;
  int batch_size = 16;
  fs::path json_out;
};

int EvaluateCmd(const EvaluateArgs& args, std::ostream& out) {
  Checkpoint ck;
  try {
    ck = LoadCheckpoint(args.checkpoint);
  } catch (const std::exception& e) {
    throw Failure(kExitData, e.what());
  }
  std::vector<UtteranceRecord> data;
  try {
    data = LoadManifest(args.data);
  } catch (const DataError& e) {
    throw Failure(kExitData, e.what());
  }
  if (!args.speakers.empty()) data = SelectSpeakers(data, args.speakers);
  if (data.empty()) throw Failure(kExitData, "no records selected");
  if (data.front().feature_dim() != ck.model_config.fusion.d_model) {
    throw Failure(kExitData, "checkpoint config " + HexDigest(ck.config_hash) + " expects d_model " +
                                 std::to_string(ck.model_config.fusion.d_model) + ", data has d " +
                                 std::to_string(data.front().feature_dim()));
  }
  if (args.batch_size < 1) throw Failure(kExitConfig, "--batch-size must be >= 1");
  const EvalReport report = Evaluate(ck.model, data, args.batch_size, LossWeights{});
  Json j = ToJson(report);
  j["checkpoint_epoch"] = ck.epoch;
  j["config_hash"] = HexDigest(ck.config_hash);
  const std::string text = j.dump(2) + "\n";
  if (!args.json_out.empty()) WriteTextFile(args.json_out, text);
  out << text;
  return kExitOk;
}

struct ReportArgs {
  std::vector<fs::path> run_dirs;
  fs::path from_summary;
  fs::path summary_out;
};

int ReportCmd(const ReportArgs& args, std::ostream& out) {
  std::vector<ReportRow> rows;
  if (!args.from_summary.empty()) {
    try {
      rows = SummaryFromJson(Json::parse(ReadTextFile(args.from_summary)));
    } catch (const std::exception& e) {
      throw Failure(kExitData, e.what());
    }
  } else {
    if (args.run_dirs.empty()) throw Failure(kExitUsage, "report: give run directories or --from-summary");
    for (const auto& dir : args.run_dirs) {
      const fs::path report = dir / "report.json";
      if (!fs::exists(report)) throw Failure(kExitData, "missing run artifact " + report.string());
      try {
        rows.push_back(RowFromExperimentJson(Json::parse(ReadTextFile(report))));
      } catch (const Json::exception& e) {
        throw Failure(kExitData, report.string() + ": " + e.what());
      }
    }
  }
  if (!args.summary_out.empty()) WriteTextFile(args.summary_out, SummaryToJson(rows).dump(2) + "\n");
  out << RenderTable(rows);
  return kExitOk;
}

}  // namespace

int Main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task bimodal emotion recognition with bridge-token cross-attention"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic two-modality dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory");
  gen_cmd->add_option("--n", gen.spec.n_utterances, "Number of utterances (multiple of 10)");
  gen_cmd->add_option("--d", gen.spec.d, "Feature dimension");
  gen_cmd->add_option("--min-len", gen.spec.min_len, "Minimum sequence length");
  gen_cmd->add_option("--max-len", gen.spec.max_len, "Maximum sequence length");
  gen_cmd->add_option("--class-separation", gen.spec.class_separation, "Distance between class means");
  gen_cmd->add_option("--dim-noise", gen.spec.dim_noise, "Half-width of valence/arousal noise");
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run the fold/seed experiment described by a config file");
  train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->required();
  train_cmd->add_option("--out", train.out, "Run directory (overrides output_dir)");
  train_cmd->add_option("--seeds", train.seeds, "Seeds (overrides train.seeds)")->delimiter(',');
  train_cmd->add_option("--folds", train.folds, "Fold indices to run")->delimiter(',');
  train_cmd->add_option("--single-task", train.single_task, "disc or con");
  train_cmd->add_option("--epochs", train.epochs, "Epochs per fold");
  train_cmd->add_option("--jobs", train.jobs, "Parallel folds");
  train_cmd->add_option("--label", train.label, "Row label in reports");

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Manifest (manifest.jsonl)")->required();
  eval_cmd->add_option("--speakers", eval.speakers, "Restrict to these speakers")->delimiter(',');
  eval_cmd->add_option("--batch-size", eval.batch_size, "Evaluation batch size");
  eval_cmd->add_option("--json", eval.json_out, "Also write the report here");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Render results of one or more runs");
  report_cmd->add_option("runs", rep.run_dirs, "Run directories");
  report_cmd->add_option("--from-summary", rep.from_summary, "Re-render a summary file");
  report_cmd->add_option("--summary", rep.summary_out, "Write a machine-readable summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return GenSynth(gen, out);
    if (train_cmd->parsed()) return Train(train, out);
    if (eval_cmd->parsed()) return EvaluateCmd(eval, out);
    if (report_cmd->parsed()) return ReportCmd(rep, out);
  } catch (const Failure& f) {
    err << "error: " << f.what() << "\n";
    return f.code;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace bridgefuse::cli
