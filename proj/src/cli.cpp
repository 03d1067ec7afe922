#include "tvmerge/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tvmerge/analysis.hpp"
#include "tvmerge/baselines.hpp"
#include "tvmerge/rng.hpp"
#include "tvmerge/survival.hpp"
#include "tvmerge/taskvec.hpp"

namespace tvmerge::cli {

namespace {

namespace fs = std::filesystem;

std::mutex g_log_mutex;

// ---------------------------------------------------------------- parsing

[[noreturn]] void parse_fail(std::size_t line, const std::string& message) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " +
                              message);
}

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto begin = s.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(ws);
  return std::string(s.substr(begin, end - begin + 1));
}

double parse_double(const std::string& value, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    parse_fail(line, "expected a number, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& value, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    parse_fail(line, "expected a nonnegative integer, got '" + value + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& value, std::size_t line) {
  return static_cast<std::size_t>(parse_u64(value, line));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string current;
  for (char c : value) {
    if (c == ' ' || c == '\t' || c == ',') {
      if (!current.empty()) items.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) items.push_back(std::move(current));
  return items;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, ptr);
}

std::string format_seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::string pad3(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03zu", v);
  return buf;
}

// ------------------------------------------------------------- filesystem

fs::path resolve_out(const ExperimentConfig& config,
                     const CommonOptions& options) {
  return options.out_dir.empty() ? fs::path(config.run.output_dir)
                                 : fs::path(options.out_dir);
}

void write_text_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes the canonical config echo, refusing to silently reuse a run
// directory created from a different config.
void write_echo(const fs::path& out, const ExperimentConfig& config,
                bool force) {
  fs::create_directories(out);
  const fs::path echo = out / "config-echo.ini";
  const std::string text = serialize_config(config);
  if (fs::exists(echo)) {
    if (read_text_file(echo) == text) return;
    if (!force) {
      throw std::runtime_error(
          "config does not match the existing echo in " + echo.string() +
          " (pass --force to replace the run directory's config)");
    }
  }
  write_text_file(echo, text);
}

std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& config,
                                           const CommonOptions& options) {
  if (options.seed) return {*options.seed};
  return config.run.seeds;
}

// ---------------------------------------------------------------- loading

synth::LoadedTaskDataset load_dataset_checked(const fs::path& out,
                                              std::size_t task,
                                              const ExperimentConfig& config) {
  const fs::path path = dataset_path(out, task);
  if (!fs::exists(path)) {
    throw std::runtime_error("missing dataset file: " + path.string() +
                             " (run gen-data first)");
  }
  synth::LoadedTaskDataset loaded = synth::load_task_dataset(path);
  if (!(loaded.config == config.data)) {
    throw std::runtime_error("dataset " + path.string() +
                             " was generated from a different [data] config");
  }
  if (loaded.data.task_id != task) {
    throw std::runtime_error("dataset " + path.string() +
                             " carries the wrong task id");
  }
  return loaded;
}

nn::ModelWeights load_ckpt_checked(const fs::path& path,
                                   const nn::NetConfig& net) {
  if (!fs::exists(path)) {
    throw std::runtime_error("missing checkpoint: " + path.string() +
                             " (run train-base first)");
  }
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (!(ckpt.weights.config == net)) {
    throw std::runtime_error("checkpoint " + path.string() +
                             " does not match the configured architecture");
  }
  return std::move(ckpt.weights);
}

std::vector<nn::Bag> gather_bags(const std::vector<nn::Bag>& bags,
                                 const std::vector<std::size_t>& indices) {
  std::vector<nn::Bag> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(bags[i]);
  return out;
}

// -------------------------------------------------------------- job pool

void run_pool(std::vector<std::function<void()>>& units, std::size_t jobs) {
  if (jobs <= 1 || units.size() <= 1) {
    for (auto& unit : units) unit();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  const std::size_t workers = std::min(jobs, units.size());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < units.size();
           i = next.fetch_add(1)) {
        try {
          units[i]();
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --------------------------------------------------------------- results

struct ResultRow {
  std::string method;
  std::size_t task_id = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  double c_index = 0.0;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double wall_time = 0.0;
};

constexpr std::string_view kResultsHeader =
    "method\ttask_id\tfold\tseed\tc_index\tfinal_train_loss\tfinal_test_loss"
    "\twall_time";

void append_results(const fs::path& out, std::vector<ResultRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const ResultRow& a, const ResultRow& b) {
              return std::tie(a.method, a.task_id, a.fold, a.seed) <
                     std::tie(b.method, b.task_id, b.fold, b.seed);
            });
  const fs::path path = out / "results.tsv";
  const bool fresh = !fs::exists(path);
  std::ofstream file(path, std::ios::app | std::ios::binary);
  if (!file) {
    throw std::runtime_error("cannot open results table: " + path.string());
  }
  if (fresh) file << kResultsHeader << '\n';
  for (const ResultRow& r : rows) {
    file << r.method << '\t' << r.task_id << '\t' << r.fold << '\t' << r.seed
         << '\t' << format_double(r.c_index) << '\t'
         << format_double(r.final_train_loss) << '\t'
         << format_double(r.final_test_loss) << '\t'
         << format_double(r.wall_time) << '\n';
  }
  if (!file) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ResultRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line == kResultsHeader) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream fl(line);
    while (std::getline(fl, field, '\t')) fields.push_back(field);
    if (fields.size() != 8) {
      throw std::runtime_error(path.string() + " line " +
                               std::to_string(line_no) +
                               ": malformed results row");
    }
    ResultRow row;
    row.method = fields[0];
    row.task_id = parse_size(fields[1], line_no);
    row.fold = parse_size(fields[2], line_no);
    row.seed = parse_u64(fields[3], line_no);
    row.c_index = parse_double(fields[4], line_no);
    row.final_train_loss = parse_double(fields[5], line_no);
    row.final_test_loss = parse_double(fields[6], line_no);
    row.wall_time = parse_double(fields[7], line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------- merge driver

struct MergeJob {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::vector<ResultRow> rows;
  std::vector<std::pair<fs::path, std::string>> files;
};

steph::StephTrainLog parse_trajectory_tsv(const std::string& text,
                                          const std::string& origin) {
  steph::StephTrainLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::size_t, steph::TrajectoryPoint> by_epoch;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "epoch\tsource_id\tmean_lambda\tmean_w") {
      continue;
    }
    std::vector<std::string> fields;
    std::string field;
    std::istringstream fl(line);
    while (std::getline(fl, field, '\t')) fields.push_back(field);
    if (fields.size() != 4) {
      throw std::runtime_error(origin + " line " + std::to_string(line_no) +
                               ": malformed trajectory row");
    }
    const std::size_t epoch = parse_size(fields[0], line_no);
    const std::size_t source = parse_size(fields[1], line_no);
    steph::TrajectoryPoint& point = by_epoch[epoch];
    point.epoch = epoch;
    if (point.mean_lambda.size() <= source) {
      point.mean_lambda.resize(source + 1, 0.0);
      point.mean_w.resize(source + 1, 0.0);
    }
    point.mean_lambda[source] = parse_double(fields[2], line_no);
    point.mean_w[source] = parse_double(fields[3], line_no);
  }
  for (auto& [epoch, point] : by_epoch) log.trajectory.push_back(point);
  return log;
}

ResultRow run_one_method(const std::string& method,
                         const ExperimentConfig& config, const fs::path& out,
                         std::uint64_t seed, std::size_t fold,
                         const nn::ModelWeights& m_target,
                         const std::vector<nn::ModelWeights>& m_sources,
                         const steph::FrozenModelSet& frozen,
                         const std::vector<nn::Bag>& train_bags,
                         const std::vector<nn::Bag>& test_bags,
                         std::vector<std::pair<fs::path, std::string>>& files) {
  const auto t0 = std::chrono::steady_clock::now();
  nn::TrainConfig tc = config.train;
  tc.seed = rng::derive_seed(seed, "merge-" + method, fold);

  baselines::EvalMetrics train_metrics;
  baselines::EvalMetrics test_metrics;
  if (method == "vanilla") {
    train_metrics = baselines::evaluate_model(m_target, train_bags);
    test_metrics = baselines::evaluate_model(m_target, test_bags);
  } else if (method == "model_avg") {
    std::vector<nn::ModelWeights> models;
    models.push_back(m_target);
    models.insert(models.end(), m_sources.begin(), m_sources.end());
    nn::ModelWeights avg = baselines::model_average(models);
    train_metrics = baselines::evaluate_model(avg, train_bags);
    test_metrics = baselines::evaluate_model(avg, test_bags);
  } else if (method == "finetune_transfer") {
    if (m_sources.empty()) {
      throw std::runtime_error("finetune_transfer needs at least one source");
    }
    bool have_best = false;
    for (std::size_t i = 0; i < m_sources.size(); ++i) {
      nn::TrainConfig ft = tc;
      ft.seed = rng::derive_seed(tc.seed, "source", i);
      nn::ModelWeights tuned =
          baselines::finetune_head(m_sources[i], train_bags, ft);
      baselines::EvalMetrics tr = baselines::evaluate_model(tuned, train_bags);
      if (!have_best || tr.c_index > train_metrics.c_index) {
        train_metrics = tr;
        test_metrics = baselines::evaluate_model(tuned, test_bags);
        have_best = true;
      }
    }
  } else if (method == "adamerging") {
    baselines::AdaMergingResult res =
        baselines::adamerging_train(frozen, train_bags, tc);
    train_metrics = baselines::evaluate_model(res.merged, train_bags);
    test_metrics = baselines::evaluate_model(res.merged, test_bags);
  } else if (method == "steph") {
    steph::StephTrainResult res =
        steph::train_steph(train_bags, frozen, config.merge, tc);
    train_metrics = baselines::evaluate_merge(res.net, frozen, train_bags,
                                              config.merge.k);
    test_metrics = baselines::evaluate_merge(res.net, frozen, test_bags,
                                             config.merge.k);
    files.emplace_back(out / "trajectories" /
                           ("steph_seed_" + std::to_string(seed) + "_fold_" +
                            std::to_string(fold) + ".tsv"),
                       steph::trajectory_tsv(res.log));
  } else {
    // Ablation variant tags.
    baselines::AblationVariant variant = baselines::parse_ablation_tag(method);
    baselines::AblationOutcome outcome = baselines::run_ablation(
        variant, frozen, train_bags, test_bags, config.merge, tc);
    train_metrics = outcome.train_metrics;
    test_metrics = outcome.test_metrics;
  }

  const auto t1 = std::chrono::steady_clock::now();
  ResultRow row;
  row.method = method;
  row.task_id = config.run.target_task;
  row.fold = fold;
  row.seed = seed;
  row.c_index = test_metrics.c_index;
  row.final_train_loss = train_metrics.mean_nll;
  row.final_test_loss = test_metrics.mean_nll;
  row.wall_time = std::chrono::duration<double>(t1 - t0).count();
  return row;
}

}  // namespace

// ------------------------------------------------------------ config API

void ExperimentConfig::validate() const {
  data.validate();
  net.validate();
  train.validate();
  merge.validate();
  if (net.d_in != data.d_in) {
    throw std::domain_error("net.d_in must equal data.d_in");
  }
  if (net.n_bins != data.n_bins) {
    throw std::domain_error("net.n_bins must equal data.n_bins");
  }
  if (run.folds < 2) throw std::domain_error("run.folds must be >= 2");
  if (run.folds > data.bags_per_task) {
    throw std::domain_error("run.folds exceeds bags_per_task");
  }
  if (run.seeds.empty()) throw std::domain_error("run.seeds must be non-empty");
  if (run.target_task >= data.n_tasks) {
    throw std::domain_error("run.target_task is out of range");
  }
  if (data.n_tasks < merge.m + 1) {
    throw std::domain_error(
        "data.n_tasks must cover the target plus merge.m sources");
  }
  if (run.output_dir.empty()) {
    throw std::domain_error("run.output_dir must be non-empty");
  }
  for (const std::string& tag : run.variants) {
    baselines::parse_ablation_tag(tag);  // throws on unknown tags
  }
}

std::vector<std::size_t> ExperimentConfig::source_tasks() const {
  std::vector<std::size_t> sources;
  sources.reserve(merge.m);
  for (std::size_t t = 0; t < data.n_tasks && sources.size() < merge.m; ++t) {
    if (t != run.target_task) sources.push_back(t);
  }
  if (sources.size() != merge.m) {
    throw std::domain_error("not enough tasks for the configured source count");
  }
  return sources;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "net" && section != "train" &&
          section != "merge" && section != "run") {
        parse_fail(line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      parse_fail(line_no, "expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(line_no, "empty key");
    if (section.empty()) {
      parse_fail(line_no, "key '" + key + "' appears before any section");
    }

    if (section == "data") {
      if (key == "n_tasks") config.data.n_tasks = parse_size(value, line_no);
      else if (key == "d_in") config.data.d_in = parse_size(value, line_no);
      else if (key == "bag_size_min")
        config.data.bag_size_min = parse_size(value, line_no);
      else if (key == "bag_size_max")
        config.data.bag_size_max = parse_size(value, line_no);
      else if (key == "bags_per_task")
        config.data.bags_per_task = parse_size(value, line_no);
      else if (key == "signal_fraction")
        config.data.signal_fraction = parse_double(value, line_no);
      else if (key == "share_weight")
        config.data.share_weight = parse_double(value, line_no);
      else if (key == "censor_rate")
        config.data.censor_rate = parse_double(value, line_no);
      else if (key == "n_bins") config.data.n_bins = parse_size(value, line_no);
      else if (key == "seed") config.data.seed = parse_u64(value, line_no);
      else parse_fail(line_no, "unknown key '" + key + "' in [data]");
    } else if (section == "net") {
      if (key == "d_in") config.net.d_in = parse_size(value, line_no);
      else if (key == "d_embed")
        config.net.d_embed = parse_size(value, line_no);
      else if (key == "d_attn") config.net.d_attn = parse_size(value, line_no);
      else if (key == "n_bins") config.net.n_bins = parse_size(value, line_no);
      else parse_fail(line_no, "unknown key '" + key + "' in [net]");
    } else if (section == "train") {
      if (key == "epochs") config.train.epochs = parse_size(value, line_no);
      else if (key == "learning_rate")
        config.train.learning_rate = parse_double(value, line_no);
      else if (key == "warmup_epochs")
        config.train.warmup_epochs = parse_size(value, line_no);
      else if (key == "weight_decay")
        config.train.weight_decay = parse_double(value, line_no);
      else if (key == "accumulation_bags")
        config.train.accumulation_bags = parse_size(value, line_no);
      else if (key == "seed") config.train.seed = parse_u64(value, line_no);
      else parse_fail(line_no, "unknown key '" + key + "' in [train]");
    } else if (section == "merge") {
      if (key == "m") config.merge.m = parse_size(value, line_no);
      else if (key == "k") config.merge.k = parse_size(value, line_no);
      else if (key == "beta") config.merge.beta = parse_double(value, line_no);
      else if (key == "gamma")
        config.merge.gamma = parse_double(value, line_no);
      else if (key == "d_hyper")
        config.merge.d_hyper = parse_size(value, line_no);
      else parse_fail(line_no, "unknown key '" + key + "' in [merge]");
    } else {  // run
      if (key == "folds") config.run.folds = parse_size(value, line_no);
      else if (key == "seeds") {
        config.run.seeds.clear();
        for (const std::string& item : split_list(value)) {
          config.run.seeds.push_back(parse_u64(item, line_no));
        }
        if (config.run.seeds.empty()) parse_fail(line_no, "empty seed list");
      } else if (key == "variants") {
        config.run.variants = split_list(value);
      } else if (key == "output_dir") {
        if (value.empty()) parse_fail(line_no, "empty output_dir");
        config.run.output_dir = value;
      } else if (key == "target_task") {
        config.run.target_task = parse_size(value, line_no);
      } else {
        parse_fail(line_no, "unknown key '" + key + "' in [run]");
      }
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!fs::exists(path)) {
    throw std::runtime_error("config file not found: " + path.string());
  }
  return parse_config_text(read_text_file(path));
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[data]\n";
  out << "n_tasks = " << c.data.n_tasks << '\n';
  out << "d_in = " << c.data.d_in << '\n';
  out << "bag_size_min = " << c.data.bag_size_min << '\n';
  out << "bag_size_max = " << c.data.bag_size_max << '\n';
  out << "bags_per_task = " << c.data.bags_per_task << '\n';
  out << "signal_fraction = " << format_double(c.data.signal_fraction) << '\n';
  out << "share_weight = " << format_double(c.data.share_weight) << '\n';
  out << "censor_rate = " << format_double(c.data.censor_rate) << '\n';
  out << "n_bins = " << c.data.n_bins << '\n';
  out << "seed = " << c.data.seed << '\n';
  out << "\n[net]\n";
  out << "d_in = " << c.net.d_in << '\n';
  out << "d_embed = " << c.net.d_embed << '\n';
  out << "d_attn = " << c.net.d_attn << '\n';
  out << "n_bins = " << c.net.n_bins << '\n';
  out << "\n[train]\n";
  out << "epochs = " << c.train.epochs << '\n';
  out << "learning_rate = " << format_double(c.train.learning_rate) << '\n';
  out << "warmup_epochs = " << c.train.warmup_epochs << '\n';
  out << "weight_decay = " << format_double(c.train.weight_decay) << '\n';
  out << "accumulation_bags = " << c.train.accumulation_bags << '\n';
  out << "seed = " << c.train.seed << '\n';
  out << "\n[merge]\n";
  out << "m = " << c.merge.m << '\n';
  out << "k = " << c.merge.k << '\n';
  out << "beta = " << format_double(c.merge.beta) << '\n';
  out << "gamma = " << format_double(c.merge.gamma) << '\n';
  out << "d_hyper = " << c.merge.d_hyper << '\n';
  out << "\n[run]\n";
  out << "folds = " << c.run.folds << '\n';
  out << "seeds = " << format_seed_list(c.run.seeds) << '\n';
  out << "variants =";
  for (const std::string& v : c.run.variants) out << ' ' << v;
  out << '\n';
  out << "output_dir = " << c.run.output_dir << '\n';
  out << "target_task = " << c.run.target_task << '\n';
  return out.str();
}

// ---------------------------------------------------------------- logging

LogLevel log_level() {
  const char* env = std::getenv("TVMERGE_LOG");
  if (env == nullptr || *env == '\0') return LogLevel::kInfo;
  const std::string value = env;
  if (value == "quiet") return LogLevel::kQuiet;
  if (value == "info") return LogLevel::kInfo;
  if (value == "debug") return LogLevel::kDebug;
  throw std::invalid_argument(
      "TVMERGE_LOG must be one of quiet, info, debug (got '" + value + "')");
}

void log_info(const std::string& message) {
  if (log_level() >= LogLevel::kInfo) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "[info] " << message << '\n';
  }
}

void log_debug(const std::string& message) {
  if (log_level() >= LogLevel::kDebug) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "[debug] " << message << '\n';
  }
}

// ------------------------------------------------------------------ paths

std::filesystem::path dataset_path(const std::filesystem::path& out,
                                   std::size_t task) {
  return out / "data" / ("task_" + pad3(task) + ".bin");
}

std::filesystem::path m_zero_path(const std::filesystem::path& out,
                                  std::uint64_t seed) {
  return out / "ckpt" / ("seed_" + std::to_string(seed)) / "m0.ckpt";
}

std::filesystem::path task_ckpt_path(const std::filesystem::path& out,
                                     std::uint64_t seed, std::size_t task,
                                     std::size_t fold) {
  return out / "ckpt" / ("seed_" + std::to_string(seed)) /
         ("task_" + pad3(task) + "_fold_" + std::to_string(fold) + ".ckpt");
}

// --------------------------------------------------------------- commands

void cmd_gen_data(const ExperimentConfig& config,
                  const CommonOptions& options) {
  ExperimentConfig effective = config;
  if (options.seed) effective.data.seed = *options.seed;
  effective.validate();
  const fs::path out = resolve_out(effective, options);
  write_echo(out, effective, options.force);

  const std::vector<synth::TaskDataset> family =
      synth::gen_task_family(effective.data);
  fs::create_directories(out / "data");
  for (const synth::TaskDataset& task : family) {
    const fs::path path = dataset_path(out, task.task_id);
    if (fs::exists(path) && !options.force) {
      throw std::runtime_error("refusing to overwrite " + path.string() +
                               " (pass --force)");
    }
    synth::save_task_dataset(path, task, effective.data);
    log_debug("wrote " + path.string());
  }
  log_info("wrote " + std::to_string(family.size()) + " dataset files under " +
           (out / "data").string());
}

void cmd_train_base(const ExperimentConfig& config,
                    const CommonOptions& options) {
  config.validate();
  const fs::path out = resolve_out(config, options);
  write_echo(out, config, options.force);
  const std::vector<std::uint64_t> seeds = effective_seeds(config, options);
  const std::size_t target = config.run.target_task;
  const std::vector<std::size_t> sources = config.source_tasks();

  std::map<std::size_t, synth::LoadedTaskDataset> datasets;
  datasets.emplace(target, load_dataset_checked(out, target, config));
  for (std::size_t s : sources) {
    datasets.emplace(s, load_dataset_checked(out, s, config));
  }

  std::vector<std::function<void()>> units;
  for (std::uint64_t seed : seeds) {
    const std::uint64_t m0_seed = rng::derive_seed(seed, "m0");
    nn::ModelWeights m0 = nn::init_weights(config.net, m0_seed);
    nn::save_checkpoint(m_zero_path(out, seed), m0, m0_seed);

    // Target: one model per fold; sources: their first split only.
    std::vector<std::pair<std::size_t, std::size_t>> pending;  // (task, fold)
    for (std::size_t f = 0; f < config.run.folds; ++f) {
      pending.emplace_back(target, f);
    }
    for (std::size_t s : sources) pending.emplace_back(s, 0);

    for (const auto& [task, fold] : pending) {
      units.push_back([&config, &datasets, out, seed, task = task,
                       fold = fold, m0]() {
        const synth::LoadedTaskDataset& loaded = datasets.at(task);
        const std::vector<synth::FoldSplit> folds =
            synth::split_folds(loaded.data, config.run.folds, seed);
        const std::vector<nn::Bag> train_bags =
            gather_bags(loaded.data.bags, folds[fold].train);
        nn::TrainConfig tc = config.train;
        tc.seed = rng::derive_seed(rng::derive_seed(seed, "task", task),
                                   "fold", fold);
        nn::TrainResult trained = nn::train_from(m0, train_bags, tc);
        if (trained.log.all_censored_warning) {
          log_info("task " + std::to_string(task) + " fold " +
                   std::to_string(fold) + ": training split is all-censored");
        }
        nn::save_checkpoint(task_ckpt_path(out, seed, task, fold),
                            trained.weights, tc.seed);
        log_debug("trained task " + std::to_string(task) + " fold " +
                  std::to_string(fold) + " seed " + std::to_string(seed));
      });
    }
  }
  run_pool(units, options.jobs);
  log_info("wrote " + std::to_string(units.size()) +
           " task checkpoints (plus one shared init per seed) under " +
           (out / "ckpt").string());
}

void cmd_merge(const ExperimentConfig& config, const CommonOptions& options) {
  config.validate();
  if (options.method.empty()) {
    throw std::invalid_argument("merge requires --method");
  }
  bool known = false;
  for (std::string_view m : kMergeMethods) known = known || m == options.method;
  for (std::string_view m : baselines::kAblationTags) {
    known = known || m == options.method;
  }
  if (!known) {
    throw std::invalid_argument("unknown merge method: " + options.method);
  }
  std::vector<std::string> methods;
  if (options.method == "ablations") {
    methods = config.run.variants;
  } else {
    methods.push_back(options.method);
  }

  const fs::path out = resolve_out(config, options);
  write_echo(out, config, options.force);
  const std::vector<std::uint64_t> seeds = effective_seeds(config, options);
  const std::size_t target = config.run.target_task;
  const std::vector<std::size_t> sources = config.source_tasks();
  const synth::LoadedTaskDataset target_data =
      load_dataset_checked(out, target, config);

  std::vector<MergeJob> jobs;
  for (std::uint64_t seed : seeds) {
    for (std::size_t fold = 0; fold < config.run.folds; ++fold) {
      jobs.push_back(MergeJob{seed, fold, {}, {}});
    }
  }

  std::vector<std::function<void()>> units;
  units.reserve(jobs.size());
  for (MergeJob& job : jobs) {
    units.push_back([&config, &options, &methods, &target_data, &sources, out,
                     target, &job]() {
      nn::ModelWeights m0 =
          load_ckpt_checked(m_zero_path(out, job.seed), config.net);
      nn::ModelWeights m_target = load_ckpt_checked(
          task_ckpt_path(out, job.seed, target, job.fold), config.net);
      std::vector<nn::ModelWeights> m_sources;
      m_sources.reserve(sources.size());
      for (std::size_t s : sources) {
        m_sources.push_back(load_ckpt_checked(
            task_ckpt_path(out, job.seed, s, 0), config.net));
      }

      steph::FrozenModelSet frozen;
      frozen.m_zero = m0;
      frozen.tau_t = taskvec::task_vector(m_target, m0);
      for (const nn::ModelWeights& ms : m_sources) {
        frozen.tau_sources.push_back(taskvec::task_vector(ms, m0));
      }

      const std::vector<synth::FoldSplit> folds =
          synth::split_folds(target_data.data, config.run.folds, job.seed);
      const std::vector<nn::Bag> train_bags =
          gather_bags(target_data.data.bags, folds[job.fold].train);
      const std::vector<nn::Bag> test_bags =
          gather_bags(target_data.data.bags, folds[job.fold].test);

      for (const std::string& method : methods) {
        job.rows.push_back(run_one_method(method, config, out, job.seed,
                                          job.fold, m_target, m_sources,
                                          frozen, train_bags, test_bags,
                                          job.files));
        log_debug("finished " + method + " seed " + std::to_string(job.seed) +
                  " fold " + std::to_string(job.fold));
      }
    });
  }
  run_pool(units, options.jobs);

  std::vector<ResultRow> rows;
  for (MergeJob& job : jobs) {
    rows.insert(rows.end(), job.rows.begin(), job.rows.end());
    for (const auto& [path, content] : job.files) {
      write_text_file(path, content);
    }
  }
  append_results(out, std::move(rows));
  log_info("appended " + std::to_string(jobs.size() * methods.size()) +
           " result rows to " + (out / "results.tsv").string());
}

void cmd_report(const ExperimentConfig& config,
                const std::vector<std::filesystem::path>& results_files,
                const CommonOptions& options) {
  const fs::path out = resolve_out(config, options);
  std::vector<fs::path> inputs = results_files;
  if (inputs.empty()) inputs.push_back(out / "results.tsv");

  std::map<std::string, std::vector<double>> by_method;
  for (const fs::path& path : inputs) {
    for (const ResultRow& row : read_results(path)) {
      by_method[row.method].push_back(row.c_index);
    }
  }
  if (by_method.empty()) {
    throw std::runtime_error("no result rows found");
  }

  std::ostringstream table;
  table << "method\tn\tmean_c_index\tstd_c_index\n";
  for (const auto& [method, values] : by_method) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double std_dev = 0.0;
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    table << method << '\t' << values.size() << '\t' << format_double(mean)
          << '\t' << format_double(std_dev) << '\n';
  }
  const std::string text = table.str();
  write_text_file(out / "report.tsv", text);
  std::cout << text;
}

namespace {

// Shared scaffolding for the analysis commands: per requested seed, load
// the fold-0 checkpoints and splits for the target and the first source.
struct AnalysisInputs {
  nn::ModelWeights m0;
  taskvec::TaskVector tau_t;
  std::vector<taskvec::TaskVector> tau_sources;
  std::vector<nn::Bag> train_bags;
  std::vector<nn::Bag> test_bags;
};

AnalysisInputs load_analysis_inputs(const ExperimentConfig& config,
                                    const fs::path& out, std::uint64_t seed,
                                    bool all_sources) {
  const std::size_t target = config.run.target_task;
  const std::vector<std::size_t> sources = config.source_tasks();
  AnalysisInputs in;
  in.m0 = load_ckpt_checked(m_zero_path(out, seed), config.net);
  nn::ModelWeights m_target =
      load_ckpt_checked(task_ckpt_path(out, seed, target, 0), config.net);
  in.tau_t = taskvec::task_vector(m_target, in.m0);
  const std::size_t n_sources = all_sources ? sources.size() : 1;
  for (std::size_t i = 0; i < n_sources; ++i) {
    nn::ModelWeights ms =
        load_ckpt_checked(task_ckpt_path(out, seed, sources[i], 0), config.net);
    in.tau_sources.push_back(taskvec::task_vector(ms, in.m0));
  }
  const synth::LoadedTaskDataset data =
      load_dataset_checked(out, target, config);
  const std::vector<synth::FoldSplit> folds =
      synth::split_folds(data.data, config.run.folds, seed);
  in.train_bags = gather_bags(data.data.bags, folds[0].train);
  in.test_bags = gather_bags(data.data.bags, folds[0].test);
  return in;
}

}  // namespace

void cmd_landscape(const ExperimentConfig& config,
                   const CommonOptions& options) {
  config.validate();
  const fs::path out = resolve_out(config, options);
  write_echo(out, config, options.force);
  for (std::uint64_t seed : effective_seeds(config, options)) {
    AnalysisInputs in = load_analysis_inputs(config, out, seed, false);
    analysis::LandscapeGrid grid = analysis::loss_landscape(
        in.m0, in.tau_sources[0], in.tau_t, in.test_bags, options.step,
        options.sigma, "test", options.jobs);
    const fs::path grid_path =
        out / "analysis" / ("landscape_seed_" + std::to_string(seed) + ".tsv");
    write_text_file(grid_path, analysis::landscape_tsv(grid));
    log_info("wrote " + grid_path.string());

    // Overlay the merge trajectory when a single-source run has logged one.
    const fs::path traj_path =
        out / "trajectories" /
        ("steph_seed_" + std::to_string(seed) + "_fold_0.tsv");
    if (config.merge.m == 1 && fs::exists(traj_path)) {
      steph::StephTrainLog log = parse_trajectory_tsv(
          read_text_file(traj_path), traj_path.string());
      const auto points = analysis::overlay_trajectory(grid, log);
      const fs::path overlay_path =
          out / "analysis" / ("overlay_seed_" + std::to_string(seed) + ".tsv");
      write_text_file(overlay_path, analysis::overlay_tsv(points));
      log_info("wrote " + overlay_path.string());
    } else {
      log_debug("no single-source trajectory for seed " +
                std::to_string(seed) + "; skipping overlay");
    }
  }
}

void cmd_sar(const ExperimentConfig& config, const CommonOptions& options) {
  config.validate();
  const fs::path out = resolve_out(config, options);
  write_echo(out, config, options.force);
  for (std::uint64_t seed : effective_seeds(config, options)) {
    AnalysisInputs in = load_analysis_inputs(config, out, seed, true);
    std::ostringstream table;
    table << "source_id\tblock\tR_alpha\tsar\n";
    for (std::size_t i = 0; i < in.tau_sources.size(); ++i) {
      taskvec::SARReport report =
          taskvec::sar(in.tau_t, in.tau_sources[i], {options.alpha});
      for (const taskvec::SAREntry& e : report.entries) {
        table << i << '\t' << e.block << '\t';
        if (e.defined) {
          table << e.r_alpha << '\t' << format_double(e.sar) << '\n';
        } else {
          table << "undefined\tundefined\n";
        }
      }
      table << i << "\taggregate\t-\t";
      if (report.aggregate_defined) {
        table << format_double(report.aggregate) << '\n';
      } else {
        table << "undefined\n";
      }
    }
    const fs::path path =
        out / "analysis" / ("sar_seed_" + std::to_string(seed) + ".tsv");
    write_text_file(path, table.str());
    log_info("wrote " + path.string());
  }
}

void cmd_sweep(const ExperimentConfig& config, const CommonOptions& options) {
  config.validate();
  const fs::path out = resolve_out(config, options);
  write_echo(out, config, options.force);
  std::vector<double> lambda_grid(11);
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    lambda_grid[i] = static_cast<double>(i) * 0.1;
  }
  lambda_grid.back() = 1.0;
  for (std::uint64_t seed : effective_seeds(config, options)) {
    AnalysisInputs in = load_analysis_inputs(config, out, seed, false);
    const std::vector<analysis::SweepRow> rows =
        analysis::tvm_sweep(in.m0, in.tau_t, in.tau_sources[0], in.train_bags,
                            in.test_bags, lambda_grid, options.alpha);
    const fs::path path =
        out / "analysis" / ("sweep_seed_" + std::to_string(seed) + ".tsv");
    write_text_file(path, analysis::sweep_tsv(rows));
    log_info("wrote " + path.string());
  }
}

}  // namespace tvmerge::cli
