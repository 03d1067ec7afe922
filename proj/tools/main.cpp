#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tvmerge/cli.hpp"

namespace cli = tvmerge::cli;

namespace {

struct Args {
  std::string config_path;
  cli::CommonOptions options;
  std::vector<std::string> report_files;
};

void add_common_flags(CLI::App* sub, Args& args) {
  sub->add_option("--config", args.config_path, "experiment config file")
      ->required();
  sub->add_option("--out", args.options.out_dir,
                  "output directory (overrides run.output_dir)");
  sub->add_flag("--force", args.options.force,
                "overwrite existing artifacts / replace a mismatched config echo");
  sub->add_option("--jobs", args.options.jobs, "worker threads")
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", args.options.seed,
                  "single seed override (gen-data: data seed; otherwise "
                  "restricts run.seeds)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-vector merging workbench for attention-based survival "
               "models on synthetic task families"};
  app.require_subcommand(1);

  Args args;

  CLI::App* gen = app.add_subcommand(
      "gen-data", "generate the synthetic task-family datasets");
  add_common_flags(gen, args);

  CLI::App* train = app.add_subcommand(
      "train-base", "train the shared-init base models per task and fold");
  add_common_flags(train, args);

  CLI::App* merge =
      app.add_subcommand("merge", "run a merge method over folds and seeds");
  add_common_flags(merge, args);
  merge
      ->add_option("--method", args.options.method,
                   "vanilla | model_avg | finetune_transfer | adamerging | "
                   "steph | ablations | <ablation tag>")
      ->required();

  CLI::App* report = app.add_subcommand(
      "report", "aggregate result tables into per-method summaries");
  add_common_flags(report, args);
  report->add_option("files", args.report_files,
                     "results.tsv files (default: <out>/results.tsv)");

  CLI::App* landscape = app.add_subcommand(
      "landscape", "evaluate the 2-D merge-coefficient loss surface");
  add_common_flags(landscape, args);
  landscape->add_option("--step", args.options.step, "coefficient grid step")
      ->check(CLI::PositiveNumber);
  landscape
      ->add_option("--sigma", args.options.sigma,
                   "Gaussian smoothing radius (0 disables)")
      ->check(CLI::NonNegativeNumber);

  CLI::App* sar = app.add_subcommand(
      "sar", "subspace alignment ratios of the target against each source");
  add_common_flags(sar, args);
  sar->add_option("--alpha", args.options.alpha, "retained energy level")
      ->check(CLI::Range(1e-9, 1.0));

  CLI::App* sweep = app.add_subcommand(
      "sweep", "single-source mixup coefficient sweep with alignment columns");
  add_common_flags(sweep, args);
  sweep->add_option("--alpha", args.options.alpha, "retained energy level")
      ->check(CLI::Range(1e-9, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    (void)cli::log_level();  // reject bad TVMERGE_LOG values up front
    const cli::ExperimentConfig config = cli::load_config(args.config_path);
    if (gen->parsed()) {
      cli::cmd_gen_data(config, args.options);
    } else if (train->parsed()) {
      cli::cmd_train_base(config, args.options);
    } else if (merge->parsed()) {
      cli::cmd_merge(config, args.options);
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> files(args.report_files.begin(),
                                               args.report_files.end());
      cli::cmd_report(config, files, args.options);
    } else if (landscape->parsed()) {
      cli::cmd_landscape(config, args.options);
    } else if (sar->parsed()) {
      cli::cmd_sar(config, args.options);
    } else if (sweep->parsed()) {
      cli::cmd_sweep(config, args.options);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
