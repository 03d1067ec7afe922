#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tvmerge/cli.hpp"
#include "tvmerge/nn.hpp"
#include "tvmerge/synthdata.hpp"

using namespace tvmerge;
namespace fs = std::filesystem;

namespace {

// Small family that still satisfies every cross-section constraint.
cli::ExperimentConfig small_config(const fs::path& out) {
  cli::ExperimentConfig c;
  c.data.n_tasks = 3;
  c.data.d_in = 8;
  c.data.bag_size_min = 3;
  c.data.bag_size_max = 5;
  c.data.bags_per_task = 16;
  c.data.signal_fraction = 0.5;
  c.data.share_weight = 0.7;
  c.data.censor_rate = 0.25;
  c.data.n_bins = 3;
  c.data.seed = 5;
  c.net.d_in = 8;
  c.net.d_embed = 8;
  c.net.d_attn = 4;
  c.net.n_bins = 3;
  c.train.epochs = 2;
  c.train.learning_rate = 1e-3;
  c.train.warmup_epochs = 1;
  c.train.accumulation_bags = 4;
  c.merge.m = 2;
  c.merge.k = 1;
  c.merge.d_hyper = 8;
  c.run.folds = 2;
  c.run.seeds = {1};
  c.run.variants = {"full", "dense_no_sparsity"};
  c.run.output_dir = out.string();
  c.run.target_task = 0;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tvmerge_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// Results rows with the wall_time column blanked, for determinism checks.
std::vector<std::string> rows_sans_walltime(const fs::path& path) {
  std::vector<std::string> rows;
  for (std::string line : split_lines(slurp(path))) {
    const std::size_t cut = line.rfind('\t');
    REQUIRE(cut != std::string::npos);
    rows.push_back(line.substr(0, cut));
  }
  return rows;
}

struct QuietLog {
  QuietLog() { setenv("TVMERGE_LOG", "quiet", 1); }
  ~QuietLog() { unsetenv("TVMERGE_LOG"); }
};

}  // namespace

TEST_CASE("empty config text parses to the defaults") {
  const cli::ExperimentConfig parsed = cli::parse_config_text("");
  CHECK(parsed == cli::ExperimentConfig{});
}

TEST_CASE("serialize and parse round-trip") {
  const cli::ExperimentConfig def;
  CHECK(cli::parse_config_text(cli::serialize_config(def)) == def);

  cli::ExperimentConfig custom = small_config("runs/custom");
  custom.run.seeds = {3, 9, 27};
  custom.run.variants = {"full", "param_w"};
  custom.train.learning_rate = 2.5e-4;
  CHECK(cli::parse_config_text(cli::serialize_config(custom)) == custom);
}

TEST_CASE("parse errors carry line numbers") {
  const auto message_of = [](const std::string& text) {
    try {
      (void)cli::parse_config_text(text);
      return std::string("<no error>");
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
  };
  CHECK(message_of("[data]\nbogus = 3\n").find("line 2") !=
        std::string::npos);
  CHECK(message_of("[data]\nbogus = 3\n").find("unknown key 'bogus'") !=
        std::string::npos);
  CHECK(message_of("[bogus]\n").find("line 1") != std::string::npos);
  CHECK(message_of("n_tasks = 3\n").find("before any section") !=
        std::string::npos);
  CHECK(message_of("[data]\nn_tasks = x\n").find("line 2") !=
        std::string::npos);
  CHECK(message_of("[train]\nlearning_rate = 1e\n").find("line 2") !=
        std::string::npos);
  CHECK(message_of("[run]\nseeds =\n").find("empty seed list") !=
        std::string::npos);
  CHECK(message_of("[data]\nn_tasks\n").find("expected key = value") !=
        std::string::npos);
}

TEST_CASE("list-valued keys accept space and comma separators") {
  const cli::ExperimentConfig a =
      cli::parse_config_text("[run]\nseeds = 1 2 3\n");
  CHECK(a.run.seeds == std::vector<std::uint64_t>{1, 2, 3});
  const cli::ExperimentConfig b =
      cli::parse_config_text("[run]\nseeds = 4, 5\n");
  CHECK(b.run.seeds == std::vector<std::uint64_t>{4, 5});
  const cli::ExperimentConfig c = cli::parse_config_text(
      "[run]\nvariants = full, fix_lambda_1\n");
  CHECK(c.run.variants ==
        std::vector<std::string>{"full", "fix_lambda_1"});
}

TEST_CASE("cross-section validation catches mismatched settings") {
  cli::ExperimentConfig c = small_config("runs/x");
  c.net.d_in = 16;
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.net.n_bins = 5;
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.run.folds = 17;  // exceeds bags_per_task = 16
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.run.target_task = 3;
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.merge.m = 3;  // needs n_tasks >= m + 1 = 4
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.run.seeds.clear();
  CHECK_THROWS_AS(c.validate(), std::domain_error);

  c = small_config("runs/x");
  c.run.variants = {"not_a_variant"};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("source_tasks skips the target in ascending order") {
  cli::ExperimentConfig c = small_config("runs/x");
  c.data.n_tasks = 5;
  c.merge.m = 3;
  c.run.target_task = 2;
  CHECK(c.source_tasks() == std::vector<std::size_t>{0, 1, 3});
  c.run.target_task = 0;
  CHECK(c.source_tasks() == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("log level follows TVMERGE_LOG") {
  unsetenv("TVMERGE_LOG");
  CHECK(cli::log_level() == cli::LogLevel::kInfo);
  setenv("TVMERGE_LOG", "quiet", 1);
  CHECK(cli::log_level() == cli::LogLevel::kQuiet);
  setenv("TVMERGE_LOG", "debug", 1);
  CHECK(cli::log_level() == cli::LogLevel::kDebug);
  setenv("TVMERGE_LOG", "loud", 1);
  CHECK_THROWS_AS(cli::log_level(), std::invalid_argument);
  unsetenv("TVMERGE_LOG");
}

TEST_CASE("run-directory layout helpers") {
  const fs::path out = "runs/demo";
  CHECK(cli::dataset_path(out, 3) == out / "data" / "task_003.bin");
  CHECK(cli::m_zero_path(out, 7) == out / "ckpt" / "seed_7" / "m0.ckpt");
  CHECK(cli::task_ckpt_path(out, 7, 12, 4) ==
        out / "ckpt" / "seed_7" / "task_012_fold_4.ckpt");
}

TEST_CASE("report computes mean and sample deviation per method") {
  const QuietLog quiet;
  const fs::path dir = fresh_dir("report");
  const fs::path results = dir / "results.tsv";
  {
    std::ofstream out(results);
    out << "method\ttask_id\tfold\tseed\tc_index\tfinal_train_loss\t"
           "final_test_loss\twall_time\n";
    const double cs[] = {0.5, 0.6, 0.7, 0.8, 0.9};
    for (int i = 0; i < 5; ++i) {
      out << "steph\t0\t" << i << "\t1\t" << cs[i] << "\t1\t1\t0.1\n";
    }
    out << "vanilla\t0\t0\t1\t0.75\t1\t1\t0.1\n";
  }
  cli::ExperimentConfig config = small_config(dir);
  cli::CommonOptions options;
  cli::cmd_report(config, {results}, options);

  const std::string text = slurp(dir / "report.tsv");
  const std::vector<std::string> lines = split_lines(text);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "method\tn\tmean_c_index\tstd_c_index");

  // Recompute with the same accumulation order as the implementation.
  double mean = 0.0;
  const double cs[] = {0.5, 0.6, 0.7, 0.8, 0.9};
  for (double v : cs) mean += v;
  mean /= 5.0;
  double ss = 0.0;
  for (double v : cs) ss += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(ss / 4.0);

  std::istringstream steph_line(lines[1]);
  std::string method;
  std::size_t n = 0;
  double got_mean = 0.0;
  double got_std = 0.0;
  steph_line >> method >> n >> got_mean >> got_std;
  CHECK(method == "steph");
  CHECK(n == 5);
  CHECK(got_mean == mean);
  CHECK(got_std == std_dev);
  CHECK(std_dev == doctest::Approx(0.15811388300841897).epsilon(1e-15));

  std::istringstream vanilla_line(lines[2]);
  double v_mean = 0.0;
  double v_std = -1.0;
  vanilla_line >> method >> n >> v_mean >> v_std;
  CHECK(method == "vanilla");
  CHECK(n == 1);
  CHECK(v_mean == 0.75);
  CHECK(v_std == 0.0);

  CHECK_THROWS_AS(
      cli::cmd_report(config, {dir / "missing.tsv"}, options),
      std::runtime_error);
}

TEST_CASE("config echo guards run directories against silent reuse") {
  const QuietLog quiet;
  const fs::path dir = fresh_dir("echo");
  cli::ExperimentConfig config = small_config(dir);
  cli::CommonOptions options;
  cli::cmd_gen_data(config, options);
  CHECK(fs::exists(dir / "config-echo.ini"));
  // Identical config: rerun allowed (files exist, so force is needed for
  // the artifacts themselves, but the echo check passes first).
  cli::ExperimentConfig changed = config;
  changed.data.censor_rate = 0.5;
  try {
    cli::cmd_gen_data(changed, options);
    FAIL("expected runtime_error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("--force") != std::string::npos);
  }
  options.force = true;
  cli::cmd_gen_data(changed, options);
  CHECK(cli::parse_config_text(slurp(dir / "config-echo.ini")) == changed);
}

TEST_CASE("artifact commands demand their prerequisites") {
  const QuietLog quiet;
  const fs::path dir = fresh_dir("prereq");
  cli::ExperimentConfig config = small_config(dir);
  cli::CommonOptions options;

  try {
    cli::cmd_train_base(config, options);
    FAIL("expected runtime_error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
  }

  cli::cmd_gen_data(config, options);
  options.method = "steph";
  try {
    cli::cmd_merge(config, options);
    FAIL("expected runtime_error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("train-base") != std::string::npos);
  }

  options.method = "bogus";
  CHECK_THROWS_AS(cli::cmd_merge(config, options), std::invalid_argument);
}

TEST_CASE("pipeline produces deterministic artifacts end to end") {
  const QuietLog quiet;
  const auto run_pipeline = [](const fs::path& dir) {
    cli::ExperimentConfig config = small_config(dir);
    cli::CommonOptions options;
    options.jobs = dir.string().size() % 2 == 0 ? 1 : 2;  // vary threading
    cli::cmd_gen_data(config, options);
    cli::cmd_train_base(config, options);
    for (const char* method :
         {"vanilla", "model_avg", "adamerging", "steph", "ablations"}) {
      options.method = method;
      cli::cmd_merge(config, options);
    }
    options.method.clear();
    cli::cmd_report(config, {}, options);
    options.step = 0.5;
    options.sigma = 1.0;
    cli::cmd_landscape(config, options);
    cli::cmd_sar(config, options);
    cli::cmd_sweep(config, options);
  };

  const fs::path a = fresh_dir("pipe_a");
  const fs::path b = fresh_dir("pipe_bb");  // different length => other jobs
  run_pipeline(a);
  run_pipeline(b);

  // Expected layout.
  for (std::size_t task = 0; task < 3; ++task) {
    CHECK(fs::exists(cli::dataset_path(a, task)));
  }
  CHECK(fs::exists(cli::m_zero_path(a, 1)));
  CHECK(fs::exists(cli::task_ckpt_path(a, 1, 0, 0)));
  CHECK(fs::exists(cli::task_ckpt_path(a, 1, 0, 1)));
  CHECK(fs::exists(cli::task_ckpt_path(a, 1, 1, 0)));
  CHECK(fs::exists(cli::task_ckpt_path(a, 1, 2, 0)));
  CHECK(fs::exists(a / "results.tsv"));
  CHECK(fs::exists(a / "report.tsv"));
  CHECK(fs::exists(a / "trajectories" / "steph_seed_1_fold_0.tsv"));
  CHECK(fs::exists(a / "trajectories" / "steph_seed_1_fold_1.tsv"));
  CHECK(fs::exists(a / "analysis" / "landscape_seed_1.tsv"));
  CHECK(fs::exists(a / "analysis" / "sar_seed_1.tsv"));
  CHECK(fs::exists(a / "analysis" / "sweep_seed_1.tsv"));

  // Row inventory: 2 folds for each of vanilla, model_avg, adamerging,
  // steph, plus 2 folds x 2 ablation variants; header on top.
  const std::vector<std::string> rows = rows_sans_walltime(a / "results.tsv");
  CHECK(rows.size() == 1 + 2 * 4 + 2 * 2);

  // Bitwise determinism across directories and thread counts, modulo the
  // timing column.
  CHECK(rows == rows_sans_walltime(b / "results.tsv"));
  for (std::size_t task = 0; task < 3; ++task) {
    CHECK(slurp(cli::dataset_path(a, task)) ==
          slurp(cli::dataset_path(b, task)));
  }
  CHECK(slurp(cli::m_zero_path(a, 1)) == slurp(cli::m_zero_path(b, 1)));
  CHECK(slurp(a / "trajectories" / "steph_seed_1_fold_0.tsv") ==
        slurp(b / "trajectories" / "steph_seed_1_fold_0.tsv"));
  CHECK(slurp(a / "analysis" / "landscape_seed_1.tsv") ==
        slurp(b / "analysis" / "landscape_seed_1.tsv"));
  CHECK(slurp(a / "analysis" / "sar_seed_1.tsv") ==
        slurp(b / "analysis" / "sar_seed_1.tsv"));
  CHECK(slurp(a / "analysis" / "sweep_seed_1.tsv") ==
        slurp(b / "analysis" / "sweep_seed_1.tsv"));
  CHECK(slurp(a / "report.tsv") == slurp(b / "report.tsv"));

  // The sweep grid is the canonical 11-point lambda axis.
  const std::vector<std::string> sweep_lines =
      split_lines(slurp(a / "analysis" / "sweep_seed_1.tsv"));
  CHECK(sweep_lines.size() == 12);
  CHECK(sweep_lines[1].rfind("0\t", 0) == 0);
  CHECK(sweep_lines[11].rfind("1\t", 0) == 0);

  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(fresh_dir("report"));
  fs::remove_all(fresh_dir("echo"));
  fs::remove_all(fresh_dir("prereq"));
}
