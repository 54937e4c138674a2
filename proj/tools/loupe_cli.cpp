// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0
//
// loupe: train, evaluate and inspect the attention model on the synthetic
// fine-grained task.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "loupe/backbone.hpp"
#include "loupe/checkpoint.hpp"
#include "loupe/config.hpp"
#include "loupe/harness.hpp"
#include "loupe/trainer.hpp"

namespace {

using namespace loupe;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (section.key = value lines)");
  cmd->add_option("--seed", f.seed, "Overrides run.seed");
  cmd->add_option("--out", f.out, "Overrides run.out_dir");
  cmd->add_option("--precision", f.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
  cmd->add_option("--set", f.overrides, "Extra key=value override, repeatable");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) set_config_value(cfg, "run.seed", std::to_string(*f.seed));
  if (!f.out.empty()) set_config_value(cfg, "run.out_dir", f.out);
  if (!f.precision.empty()) set_config_value(cfg, "run.precision", f.precision);
  for (const std::string& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.resolve();
  return cfg;
}

Dataset dataset_for(const RunConfig& cfg, const std::string& data_override) {
  if (data_override.empty()) return load_or_generate(cfg);
  RunConfig c = cfg;
  c.data_path = data_override;
  return load_or_generate(c);
}

int run(int argc, char** argv) {
  CLI::App app{"Spatial attention for fine-grained classification on a synthetic task"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model; writes metrics.jsonl and best/");
  add_common(train_cmd, train_flags);

  CommonFlags eval_flags;
  std::string eval_ckpt, eval_split = "test", eval_data;
  std::optional<std::uint64_t> shuffle_seed;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"val", "test"}));
  eval_cmd->add_option("--data", eval_data, "LFG1 dataset file; defaults to the checkpoint's dataset");
  eval_cmd->add_option("--shuffle-labels", shuffle_seed, "Permute labels with this seed before scoring");

  std::string viz_ckpt, viz_out = "viz", viz_data;
  std::size_t viz_count = 8;
  CLI::App* viz_cmd = app.add_subcommand("viz", "Write attention overlays for the first test images");
  viz_cmd->add_option("--checkpoint", viz_ckpt, "Checkpoint directory")->required();
  viz_cmd->add_option("--out", viz_out, "Output directory");
  viz_cmd->add_option("-n,--count", viz_count, "Number of images");
  viz_cmd->add_option("--data", viz_data, "LFG1 dataset file; defaults to the checkpoint's dataset");

  CommonFlags grad_flags;
  std::size_t grad_batch = 4, grad_coords = 200;
  double grad_eps = 1e-4;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  add_common(grad_cmd, grad_flags);
  grad_cmd->add_option("--batch", grad_batch);
  grad_cmd->add_option("--coordinates", grad_coords);
  grad_cmd->add_option("--eps", grad_eps);

  CommonFlags sweep_flags;
  SweepOptions sweep_opts;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Train over a grid of sparsity weights and seeds");
  add_common(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--lambdas", sweep_opts.lambdas)->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_opts.seeds)->delimiter(',');
  sweep_cmd->add_option("-j,--jobs", sweep_opts.jobs);

  CommonFlags gen_flags;
  std::string gen_file;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write the configured dataset as an LFG1 file");
  add_common(gen_cmd, gen_flags);
  gen_cmd->add_option("--file", gen_file, "Output file")->required();

  CommonFlags shapes_flags;
  CLI::App* shapes_cmd = app.add_subcommand("shapes", "Print stage geometry and parameter counts");
  add_common(shapes_cmd, shapes_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*train_cmd) {
    const RunConfig cfg = resolve_config(train_flags);
    const Dataset data = load_or_generate(cfg);
    const TrainResult r = train(cfg, data, {true, &std::cerr});
    std::cout << "best_epoch " << r.best_epoch << " best_val_accuracy " << r.best_val_accuracy << '\n'
              << summary_json(r.test) << '\n';
  } else if (*eval_cmd) {
    const RunConfig cfg = read_checkpoint_config(eval_ckpt);
    const Dataset data = dataset_for(cfg, eval_data);
    const EvalSummary s =
        evaluate_checkpoint(eval_ckpt, data, eval_split == "val" ? Split::kVal : Split::kTest, shuffle_seed);
    std::cout << summary_json(s) << '\n';
  } else if (*viz_cmd) {
    const RunConfig cfg = read_checkpoint_config(viz_ckpt);
    const Dataset data = dataset_for(cfg, viz_data);
    const VizSummary s = run_viz(viz_ckpt, data, viz_count, viz_out);
    std::cout << "wrote " << s.written << " overlays to " << viz_out << '\n' << summary_json(s.metrics) << '\n';
  } else if (*grad_cmd) {
    RunConfig cfg = resolve_config(grad_flags);
    cfg.precision = Precision::kDouble;
    const Dataset data = load_or_generate(cfg);
    const GradCheckOutcome g = run_gradcheck(cfg, data, grad_batch, {grad_eps, grad_coords, cfg.seed});
    std::cout << "coordinates " << g.report.coordinates << "\nkinks_skipped " << g.report.kinks_skipped
              << "\nparams";
    for (const auto& p : g.report.checked_params) std::cout << ' ' << p;
    std::cout << "\nloupe " << (g.loupe_checked ? "checked" : "absent") << "\nmax_rel_err "
              << g.report.max_rel_err << " at " << g.report.worst_param << '[' << g.report.worst_index << "]\n"
              << (g.passed ? "PASS" : "FAIL") << '\n';
    return g.passed ? 0 : 3;
  } else if (*sweep_cmd) {
    const RunConfig cfg = resolve_config(sweep_flags);
    const Dataset data = load_or_generate(cfg);
    sweep_opts.log = &std::cerr;
    std::cout << sweep_table(run_sweep(cfg, data, sweep_opts));
  } else if (*gen_cmd) {
    const RunConfig cfg = resolve_config(gen_flags);
    write_dataset(gen_file, generate(cfg.data));
    std::cout << "wrote " << cfg.data.total() << " samples to " << gen_file << '\n';
  } else if (*shapes_cmd) {
    const RunConfig cfg = resolve_config(shapes_flags);
    const BackboneConfig& m = cfg.model;
    for (std::size_t s = 1; s <= 4; ++s) {
      std::cout << "stage" << s << ' ' << m.stage_size(s) << 'x' << m.stage_size(s) << 'x' << m.stage_channels(s) << '\n';
    }
    const ParamCount pc = count_params(build<float>(m));
    std::cout << "backbone_params " << pc.backbone << "\nloupe_params " << pc.loupe << "\nloupe_ratio " << pc.ratio
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const loupe::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return loupe::exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
