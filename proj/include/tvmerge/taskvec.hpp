#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/nn.hpp"

namespace tvmerge::taskvec {

// Blockwise difference between a task-trained model and the shared
// initialization, carrying the NetConfig it conforms to.
struct TaskVector {
  nn::NetConfig config;
  nn::BlockSet blocks;

  bool operator==(const TaskVector&) const = default;
};

TaskVector task_vector(const nn::ModelWeights& m_task,
                       const nn::ModelWeights& m_zero);

// m_zero + scale * tau, blockwise.
nn::ModelWeights apply(const nn::ModelWeights& m_zero, const TaskVector& tau,
                       double scale);

// lambda * tau_t + (1 - lambda) * tau_s. The endpoints return exact copies
// of the corresponding input.
TaskVector mixup(const TaskVector& tau_t, const TaskVector& tau_s,
                 double lambda);

// Indices of the k largest weights, ties broken toward the lower index.
// Returned in selection order (descending weight).
std::vector<std::size_t> topk_indices(std::span<const double> w,
                                      std::size_t k);

// Sum of w_j * mixtures[j] over the top-k indices of w.
TaskVector sparse_aggregate(std::span<const TaskVector> mixtures,
                            std::span<const double> w, std::size_t k);

struct SARConfig {
  double alpha = 0.95;
};

// Smallest R such that the discarded singular-value energy fraction
// sum_{r>R} sigma_r^2 / sum_r sigma_r^2 is at most (1 - alpha)^2.
// All-zero spectra degenerate to 1.
std::size_t rank_threshold(std::span<const double> singular_values,
                           double alpha);

struct SAREntry {
  std::string block;
  std::size_t r_alpha = 0;
  double sar = 0.0;
  // False when either block is identically zero, leaving the ratio
  // undefined; sar/r_alpha are meaningless then.
  bool defined = false;
};

struct SARReport {
  std::vector<SAREntry> entries;
  // Mean of the defined block SARs weighted by the Frobenius norm of the
  // corresponding tau_t block (artifact-defined summary).
  double aggregate = 0.0;
  bool aggregate_defined = false;
};

// Subspace alignment ratio per block: with U_a the first R_alpha left
// singular vectors of the tau_new block, SAR = |U_a^T tau_t|_F / |tau_t|_F.
SARReport sar(const TaskVector& tau_t, const TaskVector& tau_new,
              const SARConfig& config = {});

// Tab-separated table: block, R_alpha, sar ("undefined" where degenerate),
// with the aggregate as a trailing row.
std::string sar_table_tsv(const SARReport& report);

}  // namespace tvmerge::taskvec
