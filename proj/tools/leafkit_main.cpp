#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "leafkit/pipeline.hpp"

namespace {

using namespace leafkit;
namespace pl = leafkit::pipeline;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  bool allow_degenerate = false;
  int threads = 0;
  long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* config = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  if (config_required) config->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--preset", args.preset, "preset name");
  cmd->add_flag("--allow-degenerate", args.allow_degenerate,
                "proceed on (near-)degenerate state Hamiltonians");
  cmd->add_option("--threads", args.threads, "worker threads (overrides LEAFKIT_THREADS)");
  cmd->add_option("--seed", args.seed, "seed (overrides config)");
}

pl::ExperimentConfig load_config(const CommonArgs& args) {
  pl::ExperimentConfig cfg = pl::parse_config_file(args.config_path);
  if (args.allow_degenerate) cfg.foliation.allow_degenerate = true;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  return cfg;
}

int exit_code_for(const std::exception& err) {
  if (dynamic_cast<const IoError*>(&err)) return 3;
  if (dynamic_cast<const RankDeficient*>(&err) ||
      dynamic_cast<const DegenerateStateHamiltonian*>(&err) ||
      dynamic_cast<const NumericalError*>(&err) || dynamic_cast<const DomainError*>(&err) ||
      dynamic_cast<const InvalidOperator*>(&err))
    return 2;
  if (dynamic_cast<const InvalidParameter*>(&err)) return 1;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leafkit: minimum-variance foliation toolkit"};
  app.require_subcommand(1);

  CommonArgs foliate_args, diag_args, evolve_args, figure_args;
  CLI::App* foliate = app.add_subcommand("foliate", "build and serialize the optimal ensemble");
  add_common(foliate, foliate_args, true);
  CLI::App* diag = app.add_subcommand("diagnostics", "shell averages and outlier curves");
  add_common(diag, diag_args, true);
  CLI::App* evolve = app.add_subcommand("evolve", "exact vs representative time evolution");
  add_common(evolve, evolve_args, true);
  CLI::App* figure = app.add_subcommand("figure", "figure-data bundles with preset parameters");
  add_common(figure, figure_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (foliate->parsed()) {
      pl::ExperimentConfig cfg = load_config(foliate_args);
      pl::RunContext ctx = pl::make_context(cfg, foliate_args.out_dir, foliate_args.threads);
      pl::run_foliate(cfg, ctx);
    } else if (diag->parsed()) {
      pl::ExperimentConfig cfg = load_config(diag_args);
      if (!diag_args.preset.empty()) {
        if (diag_args.preset == "main-text") cfg.diagnostics.main_text_subset = true;
        else {
          std::fprintf(stderr, "error: unknown diagnostics preset '%s'\n",
                       diag_args.preset.c_str());
          return 1;
        }
      }
      pl::RunContext ctx = pl::make_context(cfg, diag_args.out_dir, diag_args.threads);
      pl::run_diagnostics(cfg, ctx);
    } else if (evolve->parsed()) {
      pl::ExperimentConfig cfg = load_config(evolve_args);
      pl::RunContext ctx = pl::make_context(cfg, evolve_args.out_dir, evolve_args.threads);
      pl::run_evolve(cfg, ctx);
    } else if (figure->parsed()) {
      if (figure_args.preset.empty() || !pl::figure_name_known(figure_args.preset)) {
        std::fprintf(stderr,
                     "error: figure requires --preset with one of: fig1, fig2-left, "
                     "fig2-right, s1, s2, s3, s4\n");
        return 1;
      }
      nlohmann::json overrides;
      if (!figure_args.config_path.empty()) {
        std::ifstream in(figure_args.config_path);
        if (!in) {
          std::fprintf(stderr, "error: cannot open config file %s\n",
                       figure_args.config_path.c_str());
          return 3;
        }
        try {
          overrides = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& err) {
          std::fprintf(stderr, "error: %s: malformed JSON: %s\n",
                       figure_args.config_path.c_str(), err.what());
          return 1;
        }
      }
      pl::ExperimentConfig cfg = pl::figure_config(figure_args.preset, overrides);
      if (figure_args.allow_degenerate) cfg.foliation.allow_degenerate = true;
      if (figure_args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(figure_args.seed);
      pl::RunContext ctx = pl::make_context(cfg, figure_args.out_dir, figure_args.threads);
      // allow-degenerate/seed tweaks must reach the cells, so pass the
      // effective config through the overrides
      nlohmann::json merged_overrides = overrides.is_null() ? nlohmann::json::object() : overrides;
      if (figure_args.allow_degenerate)
        merged_overrides["foliation"]["allow_degenerate"] = true;
      if (figure_args.seed >= 0) merged_overrides["seed"] = figure_args.seed;
      pl::run_figure(figure_args.preset, merged_overrides, ctx);
    }
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code_for(err);
  }
  return 0;
}
