#include "tvmerge/taskvec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tvmerge/linalg.hpp"

namespace tvmerge::taskvec {

TaskVector task_vector(const nn::ModelWeights& m_task,
                       const nn::ModelWeights& m_zero) {
  if (m_task.config != m_zero.config) {
    throw std::invalid_argument("task_vector: model configs differ");
  }
  nn::require_same_structure(m_task.params, m_zero.params, "task_vector");
  TaskVector tau{m_task.config, m_task.params};
  nn::add_scaled(tau.blocks, m_zero.params, -1.0);
  return tau;
}

nn::ModelWeights apply(const nn::ModelWeights& m_zero, const TaskVector& tau,
                       double scale) {
  if (tau.config != m_zero.config) {
    throw std::invalid_argument("apply: config mismatch");
  }
  nn::require_same_structure(m_zero.params, tau.blocks, "apply");
  nn::ModelWeights out = m_zero;
  nn::add_scaled(out.params, tau.blocks, scale);
  return out;
}

TaskVector mixup(const TaskVector& tau_t, const TaskVector& tau_s,
                 double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::domain_error("mixup: lambda must lie in [0, 1]");
  }
  nn::require_same_structure(tau_t.blocks, tau_s.blocks, "mixup");
  if (tau_t.config != tau_s.config) {
    throw std::invalid_argument("mixup: config mismatch");
  }
  if (lambda == 1.0) return tau_t;
  if (lambda == 0.0) return tau_s;
  TaskVector out{tau_t.config, nn::zeros_like(tau_t.blocks)};
  nn::add_scaled(out.blocks, tau_t.blocks, lambda);
  nn::add_scaled(out.blocks, tau_s.blocks, 1.0 - lambda);
  return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> w,
                                      std::size_t k) {
  if (w.empty()) throw std::invalid_argument("topk_indices: empty weights");
  if (k < 1 || k > w.size()) {
    throw std::domain_error("topk_indices: k must lie in [1, m]");
  }
  for (double v : w) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::domain_error("topk_indices: weights must be finite and >= 0");
    }
  }
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  order.resize(k);
  return order;
}

TaskVector sparse_aggregate(std::span<const TaskVector> mixtures,
                            std::span<const double> w, std::size_t k) {
  if (mixtures.empty()) {
    throw std::invalid_argument("sparse_aggregate: no mixtures");
  }
  if (mixtures.size() != w.size()) {
    throw std::invalid_argument(
        "sparse_aggregate: mixture and weight counts differ");
  }
  for (std::size_t i = 1; i < mixtures.size(); ++i) {
    nn::require_same_structure(mixtures[0].blocks, mixtures[i].blocks,
                               "sparse_aggregate");
  }
  TaskVector out{mixtures[0].config, nn::zeros_like(mixtures[0].blocks)};
  for (std::size_t j : topk_indices(w, k)) {
    nn::add_scaled(out.blocks, mixtures[j].blocks, w[j]);
  }
  return out;
}

std::size_t rank_threshold(std::span<const double> singular_values,
                           double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::domain_error("rank_threshold: alpha must lie in (0, 1]");
  }
  if (singular_values.empty()) {
    throw std::invalid_argument("rank_threshold: empty spectrum");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < singular_values.size(); ++i) {
    const double s = singular_values[i];
    if (!(s >= 0.0)) {
      throw std::invalid_argument(
          "rank_threshold: singular values must be nonnegative");
    }
    if (i > 0 && s > singular_values[i - 1]) {
      throw std::invalid_argument(
          "rank_threshold: singular values must be nonincreasing");
    }
    total += s * s;
  }
  if (total == 0.0) return 1;  // degenerate all-zero spectrum
  const double budget = (1.0 - alpha) * (1.0 - alpha) * total;
  double tail = total;
  for (std::size_t r = 1; r <= singular_values.size(); ++r) {
    tail -= singular_values[r - 1] * singular_values[r - 1];
    if (tail <= budget) return r;
  }
  return singular_values.size();
}

SARReport sar(const TaskVector& tau_t, const TaskVector& tau_new,
              const SARConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha <= 1.0)) {
    throw std::domain_error("sar: alpha must lie in (0, 1]");
  }
  nn::require_same_structure(tau_t.blocks, tau_new.blocks, "sar");

  SARReport report;
  double weight_sum = 0.0;
  double weighted_sar = 0.0;
  for (std::size_t b = 0; b < tau_t.blocks.blocks.size(); ++b) {
    const auto& name = tau_t.blocks.blocks[b].name;
    const linalg::Matrix& t = tau_t.blocks.blocks[b].value;
    const linalg::Matrix& n = tau_new.blocks.blocks[b].value;
    SAREntry entry;
    entry.block = name;
    const double t_norm = linalg::frobenius_norm(t);
    const double n_norm = linalg::frobenius_norm(n);
    if (t_norm == 0.0 || n_norm == 0.0) {
      report.entries.push_back(std::move(entry));
      continue;
    }
    linalg::SvdResult dec = linalg::svd(n);
    const std::size_t r_alpha = rank_threshold(dec.singular_values,
                                               config.alpha);
    // |U_a U_a^T t|_F = |U_a^T t|_F for orthonormal columns, so project
    // once instead of reconstructing.
    double proj_sq = 0.0;
    for (std::size_t r = 0; r < r_alpha; ++r) {
      for (std::size_t j = 0; j < t.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < t.rows; ++i) {
          acc += dec.u(i, r) * t(i, j);
        }
        proj_sq += acc * acc;
      }
    }
    entry.r_alpha = r_alpha;
    entry.sar = std::sqrt(proj_sq) / t_norm;
    entry.defined = true;
    weight_sum += t_norm;
    weighted_sar += t_norm * entry.sar;
    report.entries.push_back(std::move(entry));
  }
  if (weight_sum > 0.0) {
    report.aggregate = weighted_sar / weight_sum;
    report.aggregate_defined = true;
  }
  return report;
}

std::string sar_table_tsv(const SARReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "block\tR_alpha\tsar\n";
  for (const SAREntry& e : report.entries) {
    if (e.defined) {
      out << e.block << '\t' << e.r_alpha << '\t' << e.sar << '\n';
    } else {
      out << e.block << "\tundefined\tundefined\n";
    }
  }
  if (report.aggregate_defined) {
    out << "aggregate\t-\t" << report.aggregate << '\n';
  } else {
    out << "aggregate\t-\tundefined\n";
  }
  return out.str();
}

}  // namespace tvmerge::taskvec
