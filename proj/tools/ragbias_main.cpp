#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ragbias/error.hpp"
#include "ragbias/runner.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ragbias::runner::RunConfig load_config(const CommonOpts& opts) {
  auto cfg = ragbias::runner::RunConfig::load(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  return ragbias::runner::validate(std::move(cfg));
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Path to the run config JSON")
      ->required();
  auto* seed = cmd->add_option("--seed", opts.seed, "Override the master seed");
  cmd->callback([seed, &opts] { opts.seed_set = seed->count() > 0; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RAG social-bias evaluation harness"};
  app.require_subcommand(1);

  CommonOpts ingest_opts, index_opts, run_opts, score_opts, analyze_opts,
      report_opts;
  bool resume = false;
  bool dry_run = false;
  bool do_check_backends = false;
  std::string format = "markdown";

  auto* ingest = app.add_subcommand("ingest", "Load corpora, write rejects and stats");
  add_common(ingest, ingest_opts);

  auto* index = app.add_subcommand("index", "Build collections and warm embedding caches");
  add_common(index, index_opts);

  auto* run = app.add_subcommand("run", "Execute the full experiment grid");
  add_common(run, run_opts);
  run->add_flag("--resume", resume, "Continue an existing run from its caches");
  run->add_flag("--dry-run", dry_run, "Print the plan and estimated calls, run nothing");
  run->add_flag("--check-backends", do_check_backends,
                "Verify http backends are reachable before running");

  auto* score = app.add_subcommand("score", "Recompute metrics from recorded generations");
  add_common(score, score_opts);

  auto* analyze = app.add_subcommand("analyze", "Compute the relevance/bias trade-off table");
  add_common(analyze, analyze_opts);

  auto* report = app.add_subcommand("report", "Render results tables");
  add_common(report, report_opts);
  report->add_option("--format", format, "markdown | csv | json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      ragbias::runner::cmd_ingest(load_config(ingest_opts));
      std::cout << "ingest complete\n";
    } else if (index->parsed()) {
      ragbias::runner::cmd_index(load_config(index_opts));
      std::cout << "index complete\n";
    } else if (run->parsed()) {
      auto cfg = load_config(run_opts);
      if (do_check_backends) {
        std::string problem;
        if (!ragbias::runner::check_backends(cfg, problem)) {
          std::cerr << "error: " << problem << "\n";
          return 1;
        }
      }
      const auto plan = ragbias::runner::cmd_dry_run(cfg);
      std::cout << plan.to_string();
      if (dry_run) return 0;
      const auto outputs = ragbias::runner::cmd_run(cfg, resume);
      std::cout << "run complete: " << outputs.slices.size()
                << " slice reports written to " << cfg.output_dir.string()
                << "\n";
    } else if (score->parsed()) {
      const auto outputs = ragbias::runner::cmd_score(load_config(score_opts));
      std::cout << "score complete: " << outputs.slices.size()
                << " slice reports\n";
    } else if (analyze->parsed()) {
      ragbias::runner::cmd_analyze(load_config(analyze_opts));
      std::cout << "analyze complete\n";
    } else if (report->parsed()) {
      ragbias::runner::cmd_report(load_config(report_opts), format);
      std::cout << "report written\n";
    }
  } catch (const ragbias::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
