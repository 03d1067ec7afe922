#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tvmerge/nn.hpp"
#include "tvmerge/steph.hpp"
#include "tvmerge/synthdata.hpp"

namespace tvmerge::cli {

struct RunConfig {
  std::size_t folds = 5;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<std::string> variants = {
      "fix_lambda_0", "fix_lambda_0_with_target_in_sources", "fix_lambda_1",
      "param_lambda", "param_w", "dense_no_sparsity", "full"};
  std::string output_dir = "runs/default";
  std::size_t target_task = 0;

  bool operator==(const RunConfig&) const = default;
};

struct ExperimentConfig {
  synth::TaskFamilyConfig data;
  nn::NetConfig net;
  nn::TrainConfig train;
  steph::MergeConfig merge;
  RunConfig run;

  bool operator==(const ExperimentConfig&) const = default;
  // Section invariants plus cross-section consistency (shared d_in/n_bins,
  // enough tasks for target + sources, folds fit the bag count).
  void validate() const;

  // The m source task ids: ascending, skipping the target.
  std::vector<std::size_t> source_tasks() const;
};

// Parses the line-oriented [section] key=value document. Unknown sections
// or keys, malformed values, and duplicate section content errors carry
// the line number. The whole document parses before anything runs.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical echo of a parsed config; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// Reads TVMERGE_LOG (quiet|info|debug, default info).
LogLevel log_level();
void log_info(const std::string& message);
void log_debug(const std::string& message);

struct CommonOptions {
  std::string out_dir;  // overrides run.output_dir when nonempty
  bool force = false;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;  // gen-data: data seed; else run.seeds filter
  std::string method;                 // merge only
  double alpha = 0.95;                // sar / sweep retention level
  double step = 0.04;                 // landscape grid step
  double sigma = 1.0;                 // landscape smoothing
};

inline constexpr std::string_view kMergeMethods[] = {
    "vanilla",    "model_avg", "finetune_transfer",
    "adamerging", "steph",     "ablations",
};

// Subcommand entry points; all throw on failure (the binary maps
// exceptions to a single-line error and exit code 1).
void cmd_gen_data(const ExperimentConfig& config, const CommonOptions& options);
void cmd_train_base(const ExperimentConfig& config,
                    const CommonOptions& options);
void cmd_merge(const ExperimentConfig& config, const CommonOptions& options);
void cmd_report(const ExperimentConfig& config,
                const std::vector<std::filesystem::path>& results_files,
                const CommonOptions& options);
void cmd_landscape(const ExperimentConfig& config,
                   const CommonOptions& options);
void cmd_sar(const ExperimentConfig& config, const CommonOptions& options);
void cmd_sweep(const ExperimentConfig& config, const CommonOptions& options);

// Run-directory layout helpers (shared with tests).
std::filesystem::path dataset_path(const std::filesystem::path& out,
                                   std::size_t task);
std::filesystem::path m_zero_path(const std::filesystem::path& out,
                                  std::uint64_t seed);
std::filesystem::path task_ckpt_path(const std::filesystem::path& out,
                                     std::uint64_t seed, std::size_t task,
                                     std::size_t fold);

}  // namespace tvmerge::cli
