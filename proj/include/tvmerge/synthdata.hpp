#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tvmerge/nn.hpp"

namespace tvmerge::synth {

// Controls one family of related multi-instance survival tasks. Tasks share
// a common prognostic direction blended with per-task private directions by
// share_weight (1 = identical signal everywhere, 0 = unrelated tasks).
struct TaskFamilyConfig {
  std::size_t n_tasks = 13;
  std::size_t d_in = 32;
  std::size_t bag_size_min = 8;
  std::size_t bag_size_max = 24;
  std::size_t bags_per_task = 200;
  double signal_fraction = 0.25;
  double share_weight = 0.7;
  double censor_rate = 0.6;
  std::size_t n_bins = 4;
  std::uint64_t seed = 1;

  bool operator==(const TaskFamilyConfig&) const = default;
  void validate() const;
};

struct TaskDataset {
  std::size_t task_id = 0;
  std::vector<nn::Bag> bags;
  // Ground truth for diagnostics/tests only; training code must not read
  // these two fields.
  std::vector<double> planted_direction;  // unit norm, d_in entries
  std::vector<double> latent_risk;        // one entry per bag
};

// One synthetic dataset per task. Per task k the prognostic direction is
// normalize(share_weight*u_common + (1-share_weight)*v_k); each bag draws
// standard-Gaussian instances, shifts a signal_fraction subset by beta*u_k
// with beta ~ U[-2,2], samples the event bin from hazards
// sigmoid(beta + c_bin) with offsets spread over [-1.5, 1.5], and censors
// independently at censor_rate by uniform truncation of the time bin.
std::vector<TaskDataset> gen_task_family(const TaskFamilyConfig& config);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Deterministic k-fold partition stratified by event flag: disjoint,
// covering, fold sizes within one bag of each other.
std::vector<FoldSplit> split_folds(const TaskDataset& data, std::size_t k,
                                   std::uint64_t seed);

// Binary container with magic "TVMERGE-DATA-v1": config echo, task id,
// planted direction, then per-bag instances, label, and latent risk.
void save_task_dataset(const std::filesystem::path& path,
                       const TaskDataset& data,
                       const TaskFamilyConfig& config);

struct LoadedTaskDataset {
  TaskDataset data;
  TaskFamilyConfig config;
};

LoadedTaskDataset load_task_dataset(const std::filesystem::path& path);

}  // namespace tvmerge::synth
