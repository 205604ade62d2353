// Command-line driver: pipeline stages and experiment recipes.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hpl/config.hpp"
#include "hpl/error.hpp"
#include "hpl/experiments.hpp"
#include "hpl/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

struct CommonOptions {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out) {
  cmd->add_option("--config", o.config_path, "Config file with 'section.key = value' lines");
  cmd->add_option("--preset", o.preset,
                  "Built-in starting config: random, random-desk or gambling (exp-gambling defaults to gambling)");
  cmd->add_option("--seed", o.seed, "Master seed (overrides run.seed)");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--set", o.overrides, "Override as section.key=value (repeatable)");
  cmd->add_option("--jobs", o.jobs, "Worker threads for multi-seed runs")->default_val(1)->check(CLI::PositiveNumber);
}

hpl::ExperimentConfig build_config(const CommonOptions& o) {
  hpl::ExperimentConfig config = o.config_path.empty() ? hpl::preset_config(o.preset) : hpl::load_config(o.config_path);
  for (const auto& s : o.overrides) hpl::apply_override(config, s);
  if (o.seed) config.seed = *o.seed;
  config.validate();
  return config;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based reward learning with hindsight future embeddings"};
  app.require_subcommand(1);

  CommonOptions opts;
  const std::vector<std::string> stages{"gen-data", "train-vae", "train-reward", "label", "train-rl", "eval"};
  std::vector<CLI::App*> stage_cmds;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s, "Run the " + s + " stage on a run directory");
    add_common(cmd, opts, true);
    stage_cmds.push_back(cmd);
  }
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write a manifest");
  add_common(pipeline, opts, true);

  int seeds = 100;
  bool check = false;
  auto* gambling = app.add_subcommand("exp-gambling", "Reward scatter for mr and hpl on the gambling MDP");
  add_common(gambling, opts, true);
  gambling->add_option("--seeds", seeds, "Number of seeds")->default_val(100)->check(CLI::PositiveNumber);
  gambling->add_flag("--check", check, "Exit with status 3 when the summary misses its thresholds");

  std::string methods = "oracle,sft,mr,mr-ensemble,hpl";
  auto* mismatch = app.add_subcommand("exp-mismatch", "Compare methods under preference/unlabeled policy shift");
  add_common(mismatch, opts, true);
  mismatch->add_option("--seeds", seeds, "Number of seeds")->default_val(20)->check(CLI::PositiveNumber);
  mismatch->add_option("--methods", methods, "Comma-separated methods")->default_val(methods);

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "One pipeline per (value, seed) along one axis");
  add_common(sweep, opts, true);
  sweep->add_option("--axis", axis, "k, pref_size, unlabeled_size or N")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "Number of seeds")->default_val(3)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (opts.preset.empty()) opts.preset = gambling->parsed() ? "gambling" : "random";
  hpl::ExperimentConfig config;
  try {
    config = build_config(opts);
  } catch (const hpl::Error& e) {
    std::cerr << "hpl: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (stage_cmds[i]->parsed()) {
        hpl::run_stage(stages[i], config, opts.out);
        std::cout << stages[i] << ": done (" << opts.out << ")\n";
        return kExitOk;
      }
    }
    if (pipeline->parsed()) {
      const auto result = hpl::run_pipeline(config, std::filesystem::path(opts.out));
      std::cout << result.eval.to_json().dump(2) << "\n";
      return kExitOk;
    }
    if (gambling->parsed()) {
      const auto rows = hpl::run_gambling(config, seeds, opts.jobs);
      const auto summary = hpl::summarize_gambling(rows);
      hpl::write_gambling(rows, summary, opts.out);
      std::cout << summary.to_json().dump(2) << "\n";
      return check && !summary.passed() ? kExitCheckFailed : kExitOk;
    }
    if (mismatch->parsed()) {
      std::vector<hpl::Method> list;
      for (const auto& m : split_list(methods)) list.push_back(hpl::parse_method(m));
      const auto rows = hpl::run_mismatch(config, list, seeds, opts.jobs);
      const auto summary = hpl::summarize_mismatch(config, rows);
      hpl::write_mismatch(rows, summary, opts.out);
      std::cout << summary.dump(2) << "\n";
      return kExitOk;
    }
    if (sweep->parsed()) {
      const auto rows = hpl::run_sweep(config, axis, split_list(values), seeds, opts.jobs);
      std::filesystem::create_directories(opts.out);
      hpl::write_sweep(rows, std::filesystem::path(opts.out) / "sweep.csv");
      std::cout << "sweep: " << rows.size() << " rows -> " << opts.out << "/sweep.csv\n";
      return kExitOk;
    }
  } catch (const hpl::Error& e) {
    std::cerr << "hpl: " << e.what() << "\n";
    return e.code() == hpl::ErrorCode::Config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "hpl: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
