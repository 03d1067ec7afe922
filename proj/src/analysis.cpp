#include "tvmerge/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tvmerge/survival.hpp"

namespace tvmerge::analysis {

namespace {

double mean_nll(const nn::ModelWeights& model,
                std::span<const nn::Bag> bags) {
  double acc = 0.0;
  for (const nn::Bag& bag : bags) {
    nn::ForwardResult fr = nn::forward(model, bag);
    acc += surv::nll_loss(fr.hazard_logits, bag.label);
  }
  return acc / static_cast<double>(bags.size());
}

std::vector<double> coefficient_axis(double step) {
  if (!(step > 0.0 && step <= 1.0)) {
    throw std::invalid_argument("landscape step must lie in (0, 1]");
  }
  const double count = 1.0 / step;
  const auto n = static_cast<std::size_t>(std::llround(count));
  if (n < 1 || std::abs(static_cast<double>(n) * step - 1.0) > 1e-9) {
    throw std::invalid_argument("landscape step must divide 1");
  }
  std::vector<double> axis(n + 1);
  for (std::size_t i = 0; i < n; ++i) axis[i] = static_cast<double>(i) * step;
  axis[n] = 1.0;  // exact endpoint so the corners reconstruct the models
  return axis;
}

}  // namespace

LandscapeGrid loss_landscape(const nn::ModelWeights& m_zero,
                             const taskvec::TaskVector& tau_s,
                             const taskvec::TaskVector& tau_t,
                             std::span<const nn::Bag> dataset, double step,
                             double sigma, std::string_view dataset_tag,
                             std::size_t jobs) {
  if (dataset.empty()) {
    throw std::invalid_argument("loss_landscape: empty dataset");
  }
  nn::require_same_structure(m_zero.params, tau_s.blocks, "loss_landscape");
  nn::require_same_structure(m_zero.params, tau_t.blocks, "loss_landscape");

  LandscapeGrid grid;
  grid.c_s = coefficient_axis(step);
  grid.c_t = coefficient_axis(step);
  grid.sigma = sigma;
  grid.dataset_tag = std::string(dataset_tag);
  grid.raw_loss = linalg::Matrix(grid.c_s.size(), grid.c_t.size());

  const std::size_t total = grid.c_s.size() * grid.c_t.size();
  auto eval_cell = [&](std::size_t cell) {
    const std::size_t i = cell / grid.c_t.size();
    const std::size_t j = cell % grid.c_t.size();
    nn::ModelWeights merged = m_zero;
    nn::add_scaled(merged.params, tau_s.blocks, grid.c_s[i]);
    nn::add_scaled(merged.params, tau_t.blocks, grid.c_t[j]);
    grid.raw_loss(i, j) = mean_nll(merged, dataset);
  };

  if (jobs <= 1) {
    for (std::size_t cell = 0; cell < total; ++cell) eval_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(jobs, total);
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t cell = next.fetch_add(1); cell < total;
             cell = next.fetch_add(1)) {
          eval_cell(cell);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  grid.loss = linalg::gaussian_smooth_2d(grid.raw_loss, sigma);
  return grid;
}

std::vector<SweepRow> tvm_sweep(const nn::ModelWeights& m_zero,
                                const taskvec::TaskVector& tau_t,
                                const taskvec::TaskVector& tau_s,
                                std::span<const nn::Bag> train_bags,
                                std::span<const nn::Bag> test_bags,
                                std::span<const double> lambda_grid,
                                double sar_alpha) {
  if (train_bags.empty() || test_bags.empty()) {
    throw std::invalid_argument("tvm_sweep: empty bag split");
  }
  std::vector<SweepRow> rows;
  rows.reserve(lambda_grid.size());
  for (double lambda : lambda_grid) {
    SweepRow row;
    row.lambda = lambda;
    taskvec::TaskVector mix = taskvec::mixup(tau_t, tau_s, lambda);
    nn::ModelWeights merged = taskvec::apply(m_zero, mix, 1.0);
    row.train_loss = mean_nll(merged, train_bags);
    row.test_loss = mean_nll(merged, test_bags);
    row.sar = taskvec::sar(tau_t, mix, {sar_alpha});
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TrajectoryOverlayPoint> overlay_trajectory(
    const LandscapeGrid& grid, const steph::StephTrainLog& log) {
  (void)grid;  // the grid fixes the axes; only its presence is required
  std::vector<TrajectoryOverlayPoint> points;
  points.reserve(log.trajectory.size());
  for (const steph::TrajectoryPoint& p : log.trajectory) {
    if (p.mean_lambda.size() != 1 || p.mean_w.size() != 1) {
      throw std::invalid_argument(
          "overlay_trajectory needs a single-source trajectory");
    }
    TrajectoryOverlayPoint out;
    out.epoch = p.epoch;
    out.lambda = p.mean_lambda[0];
    out.w = p.mean_w[0];
    const double raw_t = out.w * out.lambda;
    const double raw_s = out.w * (1.0 - out.lambda);
    out.c_t = std::clamp(raw_t, 0.0, 1.0);
    out.c_s = std::clamp(raw_s, 0.0, 1.0);
    out.clipped = raw_t != out.c_t || raw_s != out.c_s;
    points.push_back(out);
  }
  return points;
}

std::string landscape_tsv(const LandscapeGrid& grid) {
  std::ostringstream out;
  out.precision(17);
  out << "c_s\\c_t";
  for (double v : grid.c_t) out << '\t' << v;
  out << '\n';
  for (std::size_t i = 0; i < grid.c_s.size(); ++i) {
    out << grid.c_s[i];
    for (std::size_t j = 0; j < grid.c_t.size(); ++j) {
      out << '\t' << grid.loss(i, j);
    }
    out << '\n';
  }
  return out.str();
}

std::string overlay_tsv(std::span<const TrajectoryOverlayPoint> points) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch\tlambda\tw\tc_t\tc_s\tclipped\n";
  for (const TrajectoryOverlayPoint& p : points) {
    out << p.epoch << '\t' << p.lambda << '\t' << p.w << '\t' << p.c_t << '\t'
        << p.c_s << '\t' << (p.clipped ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string sweep_tsv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "lambda\ttrain_loss\ttest_loss";
  if (!rows.empty()) {
    for (const taskvec::SAREntry& e : rows[0].sar.entries) {
      out << "\tsar:" << e.block;
    }
    out << "\tsar:aggregate";
  }
  out << '\n';
  for (const SweepRow& row : rows) {
    out << row.lambda << '\t' << row.train_loss << '\t' << row.test_loss;
    for (const taskvec::SAREntry& e : row.sar.entries) {
      out << '\t';
      if (e.defined) {
        out << e.sar;
      } else {
        out << "undefined";
      }
    }
    out << '\t';
    if (row.sar.aggregate_defined) {
      out << row.sar.aggregate;
    } else {
      out << "undefined";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tvmerge::analysis
