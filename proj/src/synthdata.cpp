#include "tvmerge/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge::synth {

namespace {

constexpr std::string_view kDatasetMagic = "TVMERGE-DATA-v1";

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> unit_gaussian(rng::Stream& stream, std::size_t d) {
  std::vector<double> v(d);
  double norm_sq = 0.0;
  for (double& x : v) {
    x = stream.normal();
    norm_sq += x * x;
  }
  if (norm_sq == 0.0) {
    throw std::runtime_error("degenerate zero direction draw");
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return v;
}

// Bin offsets spread over [-1.5, 1.5] so that at risk 0 the hazards
// sigmoid(c_bin) cover both tails and events land in every bin.
double bin_offset(std::size_t bin, std::size_t n_bins) {
  if (n_bins == 1) return 0.0;
  return -1.5 + 3.0 * static_cast<double>(bin) /
                    static_cast<double>(n_bins - 1);
}

}  // namespace

void TaskFamilyConfig::validate() const {
  if (n_tasks < 1) throw std::domain_error("n_tasks must be >= 1");
  if (d_in < 1) throw std::domain_error("d_in must be >= 1");
  if (bag_size_min < 1 || bag_size_max < bag_size_min) {
    throw std::domain_error("bag_size_range must satisfy 1 <= min <= max");
  }
  if (bags_per_task < 1) throw std::domain_error("bags_per_task must be >= 1");
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
    throw std::domain_error("signal_fraction must lie in (0, 1]");
  }
  if (!(share_weight >= 0.0 && share_weight <= 1.0)) {
    throw std::domain_error("share_weight must lie in [0, 1]");
  }
  if (!(censor_rate >= 0.0 && censor_rate <= 1.0)) {
    throw std::domain_error("censor_rate must lie in [0, 1]");
  }
  if (n_bins < 1) throw std::domain_error("n_bins must be >= 1");
}

std::vector<TaskDataset> gen_task_family(const TaskFamilyConfig& config) {
  config.validate();

  rng::Stream common_stream(rng::derive_seed(config.seed, "data.common"));
  const std::vector<double> u_common = unit_gaussian(common_stream,
                                                     config.d_in);

  std::vector<TaskDataset> family;
  family.reserve(config.n_tasks);
  for (std::size_t task = 0; task < config.n_tasks; ++task) {
    rng::Stream dir_stream(
        rng::derive_seed(config.seed, "data.direction", task));
    const std::vector<double> v = unit_gaussian(dir_stream, config.d_in);

    std::vector<double> u(config.d_in);
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < config.d_in; ++j) {
      u[j] = config.share_weight * u_common[j] +
             (1.0 - config.share_weight) * v[j];
      norm_sq += u[j] * u[j];
    }
    if (norm_sq < 1e-24) {
      throw std::runtime_error("degenerate direction blend for task " +
                               std::to_string(task));
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : u) x *= inv;

    TaskDataset data;
    data.task_id = task;
    data.planted_direction = u;
    data.bags.reserve(config.bags_per_task);
    data.latent_risk.reserve(config.bags_per_task);

    rng::Stream bag_stream(rng::derive_seed(config.seed, "data.bags", task));
    rng::Stream censor_stream(
        rng::derive_seed(config.seed, "data.censor", task));
    std::vector<std::size_t> pick;
    for (std::size_t b = 0; b < config.bags_per_task; ++b) {
      const std::size_t n =
          config.bag_size_min +
          static_cast<std::size_t>(bag_stream.below(
              config.bag_size_max - config.bag_size_min + 1));
      nn::Bag bag;
      bag.instances = linalg::Matrix(n, config.d_in);
      for (double& x : bag.instances.data) x = bag_stream.normal();

      std::size_t n_signal = static_cast<std::size_t>(
          std::llround(config.signal_fraction * static_cast<double>(n)));
      n_signal = std::clamp<std::size_t>(n_signal, 1, n);
      pick.resize(n);
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      bag_stream.shuffle(pick);

      const double beta = bag_stream.uniform(-2.0, 2.0);
      for (std::size_t s = 0; s < n_signal; ++s) {
        double* row = &bag.instances.data[pick[s] * config.d_in];
        for (std::size_t j = 0; j < config.d_in; ++j) row[j] += beta * u[j];
      }

      // Event bin: first bin whose hazard draw fires; survivors of every
      // bin are administratively censored at the horizon.
      bag.label.time_bin = config.n_bins - 1;
      bag.label.event = false;
      for (std::size_t bin = 0; bin < config.n_bins; ++bin) {
        const double h = sigmoid(beta + bin_offset(bin, config.n_bins));
        if (bag_stream.uniform() < h) {
          bag.label.time_bin = bin;
          bag.label.event = true;
          break;
        }
      }

      // Independent censoring: truncate the recorded bin uniformly.
      if (censor_stream.uniform() < config.censor_rate) {
        bag.label.time_bin = static_cast<std::size_t>(
            censor_stream.below(bag.label.time_bin + 1));
        bag.label.event = false;
      }

      data.latent_risk.push_back(beta);
      data.bags.push_back(std::move(bag));
    }
    family.push_back(std::move(data));
  }
  return family;
}

std::vector<FoldSplit> split_folds(const TaskDataset& data, std::size_t k,
                                   std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("split_folds: need k >= 2");
  if (k > data.bags.size()) {
    throw std::invalid_argument("split_folds: more folds than bags");
  }

  std::vector<std::size_t> events;
  std::vector<std::size_t> censored;
  for (std::size_t i = 0; i < data.bags.size(); ++i) {
    (data.bags[i].label.event ? events : censored).push_back(i);
  }
  rng::Stream stream(rng::derive_seed(seed, "folds", data.task_id));
  stream.shuffle(events);
  stream.shuffle(censored);

  // Round-robin over the concatenated strata keeps both the event rate and
  // the total size balanced (sizes within one of each other).
  std::vector<std::vector<std::size_t>> fold_of(k);
  for (std::size_t i = 0; i < events.size(); ++i) {
    fold_of[i % k].push_back(events[i]);
  }
  const std::size_t offset = events.size() % k;
  for (std::size_t i = 0; i < censored.size(); ++i) {
    fold_of[(offset + i) % k].push_back(censored[i]);
  }

  std::vector<FoldSplit> splits(k);
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g) {
      auto& dst = (g == f) ? splits[f].test : splits[f].train;
      dst.insert(dst.end(), fold_of[g].begin(), fold_of[g].end());
    }
    std::sort(splits[f].train.begin(), splits[f].train.end());
    std::sort(splits[f].test.begin(), splits[f].test.end());
  }
  return splits;
}

void save_task_dataset(const std::filesystem::path& path,
                       const TaskDataset& data,
                       const TaskFamilyConfig& config) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open dataset for writing: " +
                             path.string());
  }
  binio::write_magic(out, kDatasetMagic);
  binio::write_u64(out, config.n_tasks);
  binio::write_u64(out, config.d_in);
  binio::write_u64(out, config.bag_size_min);
  binio::write_u64(out, config.bag_size_max);
  binio::write_u64(out, config.bags_per_task);
  binio::write_f64(out, config.signal_fraction);
  binio::write_f64(out, config.share_weight);
  binio::write_f64(out, config.censor_rate);
  binio::write_u64(out, config.n_bins);
  binio::write_u64(out, config.seed);
  binio::write_u64(out, data.task_id);
  for (double x : data.planted_direction) binio::write_f64(out, x);
  binio::write_u64(out, data.bags.size());
  for (std::size_t b = 0; b < data.bags.size(); ++b) {
    const nn::Bag& bag = data.bags[b];
    binio::write_u64(out, bag.instances.rows);
    binio::write_u64(out, bag.instances.cols);
    for (double x : bag.instances.data) binio::write_f64(out, x);
    binio::write_u64(out, bag.label.time_bin);
    binio::write_u8(out, bag.label.event ? 1 : 0);
    binio::write_f64(out, data.latent_risk[b]);
  }
  if (!out) {
    throw std::runtime_error("failed writing dataset: " + path.string());
  }
}

LoadedTaskDataset load_task_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open dataset: " + path.string());
  }
  binio::expect_magic(in, kDatasetMagic, path.string());
  LoadedTaskDataset loaded;
  TaskFamilyConfig& c = loaded.config;
  c.n_tasks = binio::read_u64(in);
  c.d_in = binio::read_u64(in);
  c.bag_size_min = binio::read_u64(in);
  c.bag_size_max = binio::read_u64(in);
  c.bags_per_task = binio::read_u64(in);
  c.signal_fraction = binio::read_f64(in);
  c.share_weight = binio::read_f64(in);
  c.censor_rate = binio::read_f64(in);
  c.n_bins = binio::read_u64(in);
  c.seed = binio::read_u64(in);
  c.validate();
  loaded.data.task_id = binio::read_u64(in);
  loaded.data.planted_direction.resize(c.d_in);
  for (double& x : loaded.data.planted_direction) x = binio::read_f64(in);
  const std::uint64_t n_bags = binio::read_u64(in);
  loaded.data.bags.reserve(n_bags);
  loaded.data.latent_risk.reserve(n_bags);
  for (std::uint64_t b = 0; b < n_bags; ++b) {
    nn::Bag bag;
    const std::uint64_t rows = binio::read_u64(in);
    const std::uint64_t cols = binio::read_u64(in);
    if (cols != c.d_in || rows == 0) {
      throw std::runtime_error("dataset bag shape corrupt in " +
                               path.string());
    }
    bag.instances = linalg::Matrix(rows, cols);
    for (double& x : bag.instances.data) x = binio::read_f64(in);
    bag.label.time_bin = binio::read_u64(in);
    bag.label.event = binio::read_u8(in) != 0;
    if (bag.label.time_bin >= c.n_bins) {
      throw std::runtime_error("dataset label corrupt in " + path.string());
    }
    loaded.data.latent_risk.push_back(binio::read_f64(in));
    loaded.data.bags.push_back(std::move(bag));
  }
  return loaded;
}

}  // namespace tvmerge::synth
