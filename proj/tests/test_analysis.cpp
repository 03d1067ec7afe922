#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "tvmerge/analysis.hpp"
#include "tvmerge/baselines.hpp"
#include "tvmerge/linalg.hpp"
#include "tvmerge/nn.hpp"
#include "tvmerge/rng.hpp"
#include "tvmerge/steph.hpp"
#include "tvmerge/survival.hpp"
#include "tvmerge/taskvec.hpp"

using namespace tvmerge;
using analysis::LandscapeGrid;
using taskvec::TaskVector;

namespace {

const nn::NetConfig kCfg{4, 6, 5, 3};

nn::ModelWeights random_model(std::uint64_t seed) {
  nn::ModelWeights w = nn::init_weights(kCfg, seed);
  rng::Stream s(rng::derive_seed(seed, "bias-fill"));
  for (auto name : {"emb.b1", "emb.b2", "head.b"}) {
    for (double& v : w.params.at(name).data) v = 0.5 * s.normal();
  }
  return w;
}

TaskVector random_tau(std::uint64_t seed, double scale = 0.3) {
  TaskVector tau{kCfg, nn::make_weight_blocks(kCfg)};
  rng::Stream s(seed);
  for (auto& blk : tau.blocks.blocks) {
    for (double& v : blk.value.data) v = scale * s.normal();
  }
  return tau;
}

TaskVector zero_tau() { return {kCfg, nn::make_weight_blocks(kCfg)}; }

// Rank-1 blocks keep the whole vector inside its own dominant subspace, so
// self-alignment is exactly 1 even below full retention.
TaskVector rank1_tau(std::uint64_t seed) {
  TaskVector tau = zero_tau();
  rng::Stream s(seed);
  for (auto& blk : tau.blocks.blocks) {
    std::vector<double> u(blk.value.rows);
    std::vector<double> v(blk.value.cols);
    for (double& x : u) x = 0.3 * s.normal();
    for (double& x : v) x = s.normal();
    for (std::size_t i = 0; i < blk.value.rows; ++i) {
      for (std::size_t j = 0; j < blk.value.cols; ++j) {
        blk.value(i, j) = u[i] * v[j];
      }
    }
  }
  return tau;
}

std::vector<nn::Bag> make_bags(std::uint64_t seed, std::size_t count) {
  std::vector<nn::Bag> bags;
  rng::Stream s(seed);
  for (std::size_t b = 0; b < count; ++b) {
    linalg::Matrix x(3 + b % 2, kCfg.d_in);
    for (double& v : x.data) v = s.normal();
    bags.push_back(nn::Bag{std::move(x), {b % kCfg.n_bins, b % 2 == 0}});
  }
  return bags;
}

double mean_nll(const nn::ModelWeights& m, std::span<const nn::Bag> bags) {
  double acc = 0.0;
  for (const nn::Bag& bag : bags) {
    acc += surv::nll_loss(nn::forward(m, bag).hazard_logits, bag.label);
  }
  return acc / static_cast<double>(bags.size());
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char ch : text) n += ch == '\n' ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("landscape axes at step 0.04 hold 26 increasing points") {
  const nn::ModelWeights m0 = random_model(1);
  const TaskVector tau_s = random_tau(2);
  const TaskVector tau_t = random_tau(3);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, tau_s, tau_t, make_bags(4, 2), 0.04, 1.0, "test");
  REQUIRE(grid.c_s.size() == 26);
  REQUIRE(grid.c_t.size() == 26);
  CHECK(grid.c_s.front() == 0.0);
  CHECK(grid.c_s.back() == 1.0);
  for (std::size_t i = 1; i < grid.c_s.size(); ++i) {
    CHECK(grid.c_s[i] > grid.c_s[i - 1]);
  }
  CHECK(grid.raw_loss.rows == 26);
  CHECK(grid.raw_loss.cols == 26);
  CHECK(grid.loss.rows == 26);
  CHECK(grid.loss.cols == 26);
  CHECK(grid.sigma == 1.0);
  CHECK(grid.dataset_tag == "test");
}

TEST_CASE("landscape over zero task vectors is the constant base loss") {
  const nn::ModelWeights m0 = random_model(5);
  const std::vector<nn::Bag> bags = make_bags(6, 3);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, zero_tau(), zero_tau(), bags, 0.25, 1.0, "train");
  const double base = mean_nll(m0, bags);
  for (double v : grid.raw_loss.data) CHECK(v == base);
  for (double v : grid.loss.data) {
    CHECK(v == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("unsmoothed landscape corners equal direct model evaluations") {
  const nn::ModelWeights m0 = random_model(7);
  const TaskVector tau_s = random_tau(8);
  const TaskVector tau_t = random_tau(9);
  const std::vector<nn::Bag> bags = make_bags(10, 3);
  const LandscapeGrid grid =
      analysis::loss_landscape(m0, tau_s, tau_t, bags, 0.5, 1.0, "test");
  REQUIRE(grid.c_s.size() == 3);

  const double at_m0 = mean_nll(m0, bags);
  const double at_ms = mean_nll(taskvec::apply(m0, tau_s, 1.0), bags);
  const double at_mt = mean_nll(taskvec::apply(m0, tau_t, 1.0), bags);
  CHECK(grid.raw_loss(0, 0) == doctest::Approx(at_m0).epsilon(1e-12));
  CHECK(grid.raw_loss(2, 0) == doctest::Approx(at_ms).epsilon(1e-12));
  CHECK(grid.raw_loss(0, 2) == doctest::Approx(at_mt).epsilon(1e-12));

  nn::ModelWeights both = m0;
  nn::add_scaled(both.params, tau_s.blocks, 1.0);
  nn::add_scaled(both.params, tau_t.blocks, 1.0);
  CHECK(grid.raw_loss(2, 2) == doctest::Approx(mean_nll(both, bags))
                                   .epsilon(1e-12));
}

TEST_CASE("sigma zero leaves the landscape unsmoothed") {
  const nn::ModelWeights m0 = random_model(11);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, random_tau(12), random_tau(13), make_bags(14, 2), 0.5, 0.0, "test");
  CHECK(grid.loss.data == grid.raw_loss.data);
}

TEST_CASE("smoothed landscape equals smoothing the raw surface") {
  const nn::ModelWeights m0 = random_model(15);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, random_tau(16), random_tau(17), make_bags(18, 2), 0.25, 1.0,
      "test");
  const linalg::Matrix expected =
      linalg::gaussian_smooth_2d(grid.raw_loss, 1.0);
  CHECK(grid.loss.data == expected.data);
}

TEST_CASE("smoothing conserves the mean away from the boundary") {
  // All variation sits >= 8 cells from every edge of a 26x26 grid, so each
  // affected cell sees a full, symmetric kernel and the total mass moves
  // nowhere.
  linalg::Matrix raw(26, 26);
  for (double& v : raw.data) v = 2.0;
  rng::Stream s(19);
  for (std::size_t i = 10; i < 16; ++i) {
    for (std::size_t j = 10; j < 16; ++j) raw(i, j) = 2.0 + s.uniform();
  }
  const linalg::Matrix smooth = linalg::gaussian_smooth_2d(raw, 1.0);
  double before = 0.0;
  double after = 0.0;
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    before += raw.data[i];
    after += smooth.data[i];
  }
  CHECK(after / 676.0 == doctest::Approx(before / 676.0).epsilon(1e-10));
}

TEST_CASE("landscape rejects bad steps and empty datasets") {
  const nn::ModelWeights m0 = random_model(20);
  const TaskVector tau = random_tau(21);
  const std::vector<nn::Bag> bags = make_bags(22, 2);
  CHECK_THROWS_AS(
      analysis::loss_landscape(m0, tau, tau, bags, 0.3, 1.0, "test"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      analysis::loss_landscape(m0, tau, tau, bags, 0.0, 1.0, "test"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      analysis::loss_landscape(m0, tau, tau, bags, 1.5, 1.0, "test"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      analysis::loss_landscape(m0, tau, tau, {}, 0.5, 1.0, "test"),
      std::invalid_argument);
}

TEST_CASE("landscape is identical for any thread count") {
  const nn::ModelWeights m0 = random_model(23);
  const TaskVector tau_s = random_tau(24);
  const TaskVector tau_t = random_tau(25);
  const std::vector<nn::Bag> bags = make_bags(26, 2);
  const LandscapeGrid serial = analysis::loss_landscape(
      m0, tau_s, tau_t, bags, 0.125, 1.0, "test", 1);
  const LandscapeGrid parallel = analysis::loss_landscape(
      m0, tau_s, tau_t, bags, 0.125, 1.0, "test", 4);
  CHECK(serial.raw_loss.data == parallel.raw_loss.data);
  CHECK(serial.loss.data == parallel.loss.data);
}

TEST_CASE("tvm_sweep endpoints reproduce the direct evaluations") {
  const nn::ModelWeights m0 = random_model(27);
  const TaskVector tau_t = random_tau(28);
  const TaskVector tau_s = random_tau(29);
  const std::vector<nn::Bag> train = make_bags(30, 3);
  const std::vector<nn::Bag> test = make_bags(31, 2);
  const std::vector<double> grid = {0.0, 0.5, 1.0};
  const std::vector<analysis::SweepRow> rows =
      analysis::tvm_sweep(m0, tau_t, tau_s, train, test, grid, 0.95);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].lambda == 0.0);
  CHECK(rows[2].lambda == 1.0);

  const nn::ModelWeights m_s = taskvec::apply(m0, tau_s, 1.0);
  const nn::ModelWeights m_t = taskvec::apply(m0, tau_t, 1.0);
  CHECK(rows[0].train_loss == mean_nll(m_s, train));
  CHECK(rows[0].test_loss == mean_nll(m_s, test));
  CHECK(rows[2].train_loss == mean_nll(m_t, train));
  CHECK(rows[2].test_loss == mean_nll(m_t, test));

  // The lambda = 0 mixture is tau_s itself, so its SAR table matches the
  // direct cross-alignment bitwise.
  const taskvec::SARReport direct = taskvec::sar(tau_t, tau_s, {0.95});
  REQUIRE(rows[0].sar.entries.size() == direct.entries.size());
  for (std::size_t b = 0; b < direct.entries.size(); ++b) {
    CHECK(rows[0].sar.entries[b].sar == direct.entries[b].sar);
    CHECK(rows[0].sar.entries[b].r_alpha == direct.entries[b].r_alpha);
  }
  CHECK(rows[0].sar.aggregate == direct.aggregate);
}

TEST_CASE("tvm_sweep self-alignment row is exactly one") {
  const nn::ModelWeights m0 = random_model(32);
  const TaskVector tau_t_low = rank1_tau(33);
  const TaskVector tau_s = random_tau(34);
  const std::vector<nn::Bag> bags = make_bags(35, 2);
  const std::vector<double> grid = {0.0, 1.0};

  // Low-rank target at the default retention.
  const std::vector<analysis::SweepRow> low = analysis::tvm_sweep(
      m0, tau_t_low, tau_s, bags, bags, grid, 0.95);
  for (const taskvec::SAREntry& e : low[1].sar.entries) {
    REQUIRE(e.defined);
    CHECK(e.sar == doctest::Approx(1.0).epsilon(1e-8));
  }

  // Generic target at full retention.
  const TaskVector tau_t = random_tau(36);
  const std::vector<analysis::SweepRow> full =
      analysis::tvm_sweep(m0, tau_t, tau_s, bags, bags, grid, 1.0);
  for (const taskvec::SAREntry& e : full[1].sar.entries) {
    REQUIRE(e.defined);
    CHECK(e.sar == doctest::Approx(1.0).epsilon(1e-8));
  }
  CHECK(full[1].sar.aggregate == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("tvm_sweep validates its splits") {
  const nn::ModelWeights m0 = random_model(37);
  const TaskVector tau = random_tau(38);
  const std::vector<nn::Bag> bags = make_bags(39, 2);
  const std::vector<double> grid = {0.5};
  CHECK_THROWS_AS(analysis::tvm_sweep(m0, tau, tau, {}, bags, grid, 0.95),
                  std::invalid_argument);
  CHECK_THROWS_AS(analysis::tvm_sweep(m0, tau, tau, bags, {}, grid, 0.95),
                  std::invalid_argument);
}

TEST_CASE("constant-hypernet merge matches the sweep loss curve") {
  // With one source, k = 1, and the heads pinned to constants (lambda, 1),
  // the per-bag merged model is M_0 + lambda tau_t + (1-lambda) tau_s: the
  // same model the sweep evaluates.
  const nn::ModelWeights m0 = random_model(40);
  const TaskVector tau_t = random_tau(41);
  const TaskVector tau_s = random_tau(42);
  const std::vector<nn::Bag> bags = make_bags(43, 4);
  steph::FrozenModelSet frozen{m0, tau_t, {tau_s}};

  const std::vector<double> grid = {0.0, 0.3, 0.7, 1.0};
  const std::vector<analysis::SweepRow> rows =
      analysis::tvm_sweep(m0, tau_t, tau_s, bags, bags, grid, 0.95);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    steph::HyperConfig hc;
    hc.d_in = kCfg.d_in;
    hc.d_hyper = 8;
    hc.m = 1;
    hc.lambda_mode = steph::HeadMode::kFixed;
    hc.w_mode = steph::HeadMode::kFixed;
    hc.fixed_lambda = grid[i];
    hc.fixed_w = 1.0;
    const steph::HyperNet net = steph::init_hypernet(hc, 44);
    const baselines::EvalMetrics metrics =
        baselines::evaluate_merge(net, frozen, bags, 1);
    CHECK(std::abs(metrics.mean_nll - rows[i].train_loss) < 1e-10);
  }
}

TEST_CASE("overlay maps hypernet outputs onto the coefficient axes") {
  const nn::ModelWeights m0 = random_model(45);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, random_tau(46), random_tau(47), make_bags(48, 2), 0.5, 0.0, "test");

  steph::StephTrainLog log;
  log.trajectory = {
      {1, {1.0}, {1.0}},    // lands exactly on (c_t, c_s) = (1, 0)
      {2, {0.25}, {0.5}},   // interior: (0.125, 0.375), exact in binary
      {3, {0.5}, {2.0}},    // touches (1, 1) exactly; still in range
      {4, {0.5}, {3.0}},    // raw (1.5, 1.5): clipped and flagged
      {5, {0.0}, {1.0}},    // (0, 1)
  };
  const std::vector<analysis::TrajectoryOverlayPoint> points =
      analysis::overlay_trajectory(grid, log);
  REQUIRE(points.size() == 5);
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(points[i].epoch == i + 1);
    CHECK(points[i].c_t >= 0.0);
    CHECK(points[i].c_t <= 1.0);
    CHECK(points[i].c_s >= 0.0);
    CHECK(points[i].c_s <= 1.0);
  }
  CHECK(points[0].c_t == 1.0);
  CHECK(points[0].c_s == 0.0);
  CHECK_FALSE(points[0].clipped);

  CHECK(points[1].c_t == 0.125);
  CHECK(points[1].c_s == 0.375);
  CHECK_FALSE(points[1].clipped);

  CHECK(points[2].c_t == 1.0);
  CHECK(points[2].c_s == 1.0);
  CHECK_FALSE(points[2].clipped);

  CHECK(points[3].c_t == 1.0);
  CHECK(points[3].c_s == 1.0);
  CHECK(points[3].clipped);

  CHECK(points[4].c_t == 0.0);
  CHECK(points[4].c_s == 1.0);
  CHECK_FALSE(points[4].clipped);
}

TEST_CASE("overlay rejects multi-source trajectories") {
  const nn::ModelWeights m0 = random_model(49);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, random_tau(50), random_tau(51), make_bags(52, 2), 0.5, 0.0, "test");
  steph::StephTrainLog log;
  log.trajectory = {{1, {0.5, 0.5}, {1.0, 1.0}}};
  CHECK_THROWS_AS(analysis::overlay_trajectory(grid, log),
                  std::invalid_argument);
}

TEST_CASE("overlay of a real training log has one point per epoch") {
  const nn::ModelWeights m0 = random_model(53);
  const TaskVector tau_t = random_tau(54);
  const TaskVector tau_s = random_tau(55);
  const std::vector<nn::Bag> bags = make_bags(56, 4);
  const steph::FrozenModelSet frozen{m0, tau_t, {tau_s}};
  steph::MergeConfig mc;
  mc.m = 1;
  mc.k = 1;
  mc.d_hyper = 8;
  nn::TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 57;
  const steph::StephTrainResult trained =
      steph::train_steph(bags, frozen, mc, tc);

  const LandscapeGrid grid = analysis::loss_landscape(
      m0, tau_s, tau_t, bags, 0.5, 0.0, "train");
  const std::vector<analysis::TrajectoryOverlayPoint> points =
      analysis::overlay_trajectory(grid, trained.log);
  REQUIRE(points.size() == 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(points[i].epoch == i + 1);
    const double raw_t = points[i].w * points[i].lambda;
    const double raw_s = points[i].w * (1.0 - points[i].lambda);
    CHECK(points[i].clipped ==
          (raw_t < 0.0 || raw_t > 1.0 || raw_s < 0.0 || raw_s > 1.0));
  }
}

TEST_CASE("landscape_tsv lays out axes and losses") {
  const nn::ModelWeights m0 = random_model(58);
  const LandscapeGrid grid = analysis::loss_landscape(
      m0, random_tau(59), random_tau(60), make_bags(61, 2), 0.25, 1.0,
      "test");
  const std::string tsv = analysis::landscape_tsv(grid);
  CHECK(count_lines(tsv) == 6);  // header + 5 rows
  CHECK(tsv.rfind("c_s\\c_t\t0\t0.25\t0.5\t0.75\t1\n", 0) == 0);
  // Each data line: leading c_s value plus 5 loss cells.
  const std::size_t first_end = tsv.find('\n');
  const std::string row = tsv.substr(first_end + 1, tsv.find('\n', first_end + 1) - first_end - 1);
  std::size_t tabs = 0;
  for (char ch : row) tabs += ch == '\t' ? 1 : 0;
  CHECK(tabs == 5);
}

TEST_CASE("overlay_tsv and sweep_tsv carry the expected columns") {
  std::vector<analysis::TrajectoryOverlayPoint> points(2);
  points[0] = {1, 0.5, 1.0, 0.5, 0.5, false};
  points[1] = {2, 0.5, 3.0, 1.0, 1.0, true};
  const std::string overlay = analysis::overlay_tsv(points);
  CHECK(overlay.rfind("epoch\tlambda\tw\tc_t\tc_s\tclipped\n", 0) == 0);
  CHECK(overlay.find("1\t0.5\t1\t0.5\t0.5\t0\n") != std::string::npos);
  CHECK(overlay.find("2\t0.5\t3\t1\t1\t1\n") != std::string::npos);

  const nn::ModelWeights m0 = random_model(62);
  TaskVector tau_t = random_tau(63);
  for (double& v : tau_t.blocks.at("emb.W2").data) v = 0.0;
  const TaskVector tau_s = random_tau(64);
  const std::vector<nn::Bag> bags = make_bags(65, 2);
  const std::vector<double> grid = {0.0, 1.0};
  const std::vector<analysis::SweepRow> rows =
      analysis::tvm_sweep(m0, tau_t, tau_s, bags, bags, grid, 0.95);
  const std::string sweep = analysis::sweep_tsv(rows);
  CHECK(sweep.rfind("lambda\ttrain_loss\ttest_loss\tsar:", 0) == 0);
  CHECK(sweep.find("sar:emb.W2") != std::string::npos);
  CHECK(sweep.find("sar:aggregate") != std::string::npos);
  // The zeroed tau_t block is undefined at every lambda.
  CHECK(sweep.find("undefined") != std::string::npos);
  CHECK(count_lines(sweep) == 3);
}
