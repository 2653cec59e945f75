// tpm: run experiment stages from a JSON config.
//
//   tpm run --config exp.json [--out DIR] [--workers N] [--seed S]
//   tpm fit|genqueries|embed|eval --config exp.json ...
//   tpm validate --config exp.json | --model model.txt
//   tpm synth --out data.csv -m 7000 --seed 3
//
// Exit codes: 0 success, 2 config error, 3 stage failure.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tpm/experiment.hpp"
#include "tpm/kernels.hpp"
#include "tpm/spn.hpp"
#include "tpm/synthetic.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Common {
  std::string config;
  std::string out;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  std::string stage;
  std::string isa;
};

void add_common(CLI::App* cmd, Common& c, bool with_stage) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("--workers", c.workers, "worker threads; never changes outputs")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "replace every seed in the config");
  cmd->add_option("--isa", c.isa, "kernel set: scalar or avx2 (default: best available)");
  if (with_stage) cmd->add_option("--stage", c.stage, "run one stage: fit, genqueries, embed, eval");
}

tpm::ExperimentConfig load_config(const Common& c) {
  tpm::ExperimentConfig cfg = tpm::load_experiment_config(c.config);
  if (c.seed) tpm::override_seeds(cfg, *c.seed);
  tpm::validate_experiment_config(cfg);
  return cfg;
}

void select_isa(const std::string& name) {
  if (name.empty()) return;
  if (name == "scalar") {
    tpm::kernels::set_active_isa(tpm::kernels::Isa::kScalar);
  } else if (name == "avx2") {
    tpm::kernels::set_active_isa(tpm::kernels::Isa::kAvx2);
  } else {
    throw tpm::ConfigError("unknown --isa '" + name + "'");
  }
}

int run(const Common& c, std::optional<std::string> stage) {
  select_isa(c.isa);
  const tpm::ExperimentConfig cfg = load_config(c);
  tpm::RunOptions opts;
  opts.workers = c.workers;
  opts.stage = std::move(stage);
  if (!c.out.empty()) opts.out_dir = c.out;
  const tpm::RunArtifacts artifacts = tpm::run_experiment(cfg, opts);
  for (const auto& f : artifacts.files) std::cout << f.string() << "\n";
  if (artifacts.curve) {
    std::cout << tpm::format_curve_csv(*artifacts.curve);
  }
  return 0;
}

int validate_model(const std::string& path) {
  const auto model = tpm::load_model(path);
  std::cout << path << ": " << model->kind() << " over " << model->num_vars() << " variables";
  if (const auto* spn = dynamic_cast<const tpm::Spn*>(model.get())) {
    std::cout << ", " << spn->num_nodes() << " nodes (" << spn->count(tpm::SpnNodeKind::kSum) << " sum, "
              << spn->count(tpm::SpnNodeKind::kProduct) << " product, " << spn->count(tpm::SpnNodeKind::kLeaf)
              << " leaf)";
  }
  std::cout << ": ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embeddings from tractable density models"};
  app.require_subcommand(1);

  Common common;
  auto* run_cmd = app.add_subcommand("run", "run the full pipeline (or one --stage)");
  add_common(run_cmd, common, true);
  std::vector<CLI::App*> stage_cmds;
  for (const auto& name : tpm::kStages) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage against existing artifacts");
    add_common(cmd, common, false);
    stage_cmds.push_back(cmd);
  }

  auto* validate_cmd = app.add_subcommand("validate", "check a config or a model file");
  std::string validate_config, validate_model_path;
  auto* vc = validate_cmd->add_option("--config", validate_config, "experiment config")->check(CLI::ExistingFile);
  auto* vm = validate_cmd->add_option("--model", validate_model_path, "SPN or mixture model file")
                 ->check(CLI::ExistingFile);
  vc->excludes(vm);
  validate_cmd->require_option(1);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic rectangles-vs-noise dataset");
  std::string synth_out;
  std::size_t synth_m = 1000;
  std::uint64_t synth_seed = 1;
  tpm::RectanglesOptions synth_opts;
  synth_cmd->add_option("--out", synth_out, "output CSV (labels in the last column)")->required();
  synth_cmd->add_option("-m,--samples", synth_m, "number of samples")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--width", synth_opts.width, "image width");
  synth_cmd->add_option("--height", synth_opts.height, "image height");
  synth_cmd->add_option("--noise", synth_opts.flip_noise, "pixel flip probability");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return run(common, common.stage.empty() ? std::nullopt : std::optional<std::string>(common.stage));
    }
    for (auto* cmd : stage_cmds) {
      if (cmd->parsed()) return run(common, cmd->get_name());
    }
    if (validate_cmd->parsed()) {
      if (!validate_model_path.empty()) return validate_model(validate_model_path);
      Common c;
      c.config = validate_config;
      const tpm::ExperimentConfig cfg = load_config(c);
      std::cout << validate_config << ": ok (hash " << tpm::config_hash(cfg) << ")\n";
      return 0;
    }
    if (synth_cmd->parsed()) {
      tpm::write_binary_dataset(tpm::make_rectangles_dataset(synth_m, synth_seed, synth_opts), synth_out);
      return 0;
    }
  } catch (const tpm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const tpm::StageError& e) {
    std::cerr << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
