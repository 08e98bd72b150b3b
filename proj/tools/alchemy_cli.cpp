// Command-line front end over the C API.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alchemy/alchemy.h"

namespace {

using json = nlohmann::json;

int exit_code(alc_status s) {
  switch (s) {
    case ALC_OK:
      return 0;
    case ALC_INVALID_ARGUMENT:
    case ALC_NOT_APPLICABLE:
    case ALC_PARSE_ERROR:
    case ALC_INVALID_CONFIG:
    case ALC_EPISODE_TOO_LONG:
    case ALC_MISSING_METRIC:
    case ALC_INCOMPATIBLE_KIND:
    case ALC_MISSING_ORACLE_CONTEXT:
    case ALC_SHAPE_MISMATCH:
    case ALC_EMPTY_POOL:
      return 1;
    default:
      return 2;
  }
}

using Command = alc_status (*)(const char*, char**);

int run(Command cmd, const json& request) {
  char* response = nullptr;
  const alc_status s = cmd(request.dump().c_str(), &response);
  if (response != nullptr) {
    std::cout << response << "\n";
    alc_string_free(response);
  }
  if (s != ALC_OK) std::cerr << "error: " << alc_status_string(s) << ": " << alc_last_error() << "\n";
  return exit_code(s);
}

/// "a.b=value"; the value is read as JSON when it parses, else as a string.
void add_override(json& overrides, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected path=value, got " + assignment);
  const std::string value = assignment.substr(eq + 1);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  overrides[assignment.substr(0, eq)] = v;
}

struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string output_dir;
  std::string task;
  std::vector<int> ks;
  std::vector<std::uint64_t> seeds;
  int epochs = -1;
  bool fresh = false;
  bool quiet = false;

  void attach(CLI::App* app, bool training) {
    app->add_option("-c,--config", config, "JSON run config");
    app->add_option("--set", sets, "Override a config field: path=value (repeatable)");
    app->add_option("-o,--output-dir", output_dir, "Output directory (relative to $ALCHEMY_OUTPUT_ROOT if set)");
    app->add_option("--task", task, "Task kind: withheld_pair, composition, decomposition");
    app->add_option("--k", ks, "Hop parameter(s)")->delimiter(',');
    if (training) {
      app->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
      app->add_option("--epochs", epochs, "Number of epochs");
      app->add_flag("--fresh", fresh, "Ignore existing checkpoints and logs");
      app->add_flag("-q,--quiet", quiet, "No per-epoch progress");
    }
  }

  json request() const {
    json req;
    if (!config.empty()) req["config_path"] = config;
    json overrides = json::object();
    if (!output_dir.empty()) overrides["output_dir"] = output_dir;
    if (!task.empty()) overrides["task_kind"] = task;
    if (!ks.empty()) overrides["k"] = ks;
    if (!seeds.empty()) overrides["seeds"] = seeds;
    if (epochs >= 0) overrides["optimizer.epochs"] = epochs;
    for (const auto& s : sets) add_override(overrides, s);
    req["overrides"] = overrides;
    req["fresh"] = fresh;
    req["verbose"] = !quiet;
    return req;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic latent-structure tasks: data generation, training and staged-metric analysis"};
  app.set_version_flag("--version", std::string(alc_version()));
  app.require_subcommand(1);

  ConfigFlags gen_flags;
  auto* gen = app.add_subcommand("generate", "Generate chemistries, episodes and a manifest");
  gen_flags.attach(gen, false);

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one run per (k, seed)");
  train_flags.attach(train, true);

  ConfigFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Expand a grid config and train every point");
  sweep_flags.attach(sweep, true);

  std::string episodes, chemistries, predictions, chance, out_file;
  auto* evaluate = app.add_subcommand("evaluate", "Factorized metrics for a predictions file");
  evaluate->add_option("--episodes", episodes, "Episode JSONL")->required();
  evaluate->add_option("--chemistries", chemistries, "Chemistry JSONL")->required();
  auto* pred_opt = evaluate->add_option("--predictions", predictions, "Predictions JSONL");
  auto* chance_opt = evaluate->add_option(
      "--chance", chance, "Chance predictor: uniform_all_108, uniform_in_support, uniform_reachable, uniform_correct_half");
  pred_opt->excludes(chance_opt);
  evaluate->add_option("--out", out_file, "Also write the result to this file");

  std::vector<std::string> runs;
  std::string plot_out, split = "val";
  std::vector<std::string> metrics;
  auto* export_plots = app.add_subcommand("export-plots", "Tidy plot-data tables from run logs");
  export_plots->add_option("--runs", runs, "Run or output directories")->required();
  export_plots->add_option("--out", plot_out, "Output directory")->required();
  export_plots->add_option("--split", split, "Log split to export (val or train)");
  export_plots->add_option("--metrics", metrics, "Metric columns (default: per task kind)")->delimiter(',');

  std::string validate_path, validate_chems;
  auto* validate = app.add_subcommand("validate", "Check a chemistry/episode file or dataset directory");
  validate->add_option("path", validate_path, "File or dataset directory")->required();
  validate->add_option("--chemistries", validate_chems, "Chemistry JSONL for episode files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return run(alc_cmd_generate, gen_flags.request());
    if (*train) return run(alc_cmd_train, train_flags.request());
    if (*sweep) return run(alc_cmd_sweep, sweep_flags.request());
    if (*evaluate) {
      if (predictions.empty() && chance.empty()) {
        std::cerr << "error: one of --predictions or --chance is required\n";
        return 1;
      }
      json req{{"episodes", episodes}, {"chemistries", chemistries}};
      if (!chance.empty()) req["chance"] = chance;
      else req["predictions"] = predictions;
      char* response = nullptr;
      const alc_status s = alc_cmd_evaluate(req.dump().c_str(), &response);
      if (response != nullptr) {
        std::cout << response << "\n";
        if (!out_file.empty()) {
          if (FILE* f = std::fopen(out_file.c_str(), "w")) {
            std::fputs(response, f);
            std::fputs("\n", f);
            std::fclose(f);
          } else {
            std::cerr << "error: cannot write " << out_file << "\n";
            alc_string_free(response);
            return 2;
          }
        }
        alc_string_free(response);
      }
      if (s != ALC_OK) std::cerr << "error: " << alc_status_string(s) << ": " << alc_last_error() << "\n";
      return exit_code(s);
    }
    if (*export_plots) {
      json req{{"runs", runs}, {"out_dir", plot_out}, {"split", split}};
      if (!metrics.empty()) req["metrics"] = metrics;
      return run(alc_cmd_export_plots, req);
    }
    if (*validate) {
      json req{{"path", validate_path}};
      if (!validate_chems.empty()) req["chemistries"] = validate_chems;
      return run(alc_cmd_validate, req);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
