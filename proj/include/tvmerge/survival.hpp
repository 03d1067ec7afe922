#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tvmerge::surv {

// Discrete-time survival label: event observed in bin time_bin (event=true)
// or censored at time_bin (event=false).
struct SurvLabel {
  std::size_t time_bin = 0;
  bool event = false;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> dlogits;
};

// Discrete-hazard negative log-likelihood. Hazards h_k = sigmoid(logit_k),
// clamped to [1e-7, 1 - 1e-7] before any log. An event at bin y contributes
// -log h_y - sum_{k<y} log(1 - h_k); a censoring at bin y contributes
// -sum_{k<=y} log(1 - h_k).
double nll_loss(std::span<const double> hazard_logits, const SurvLabel& label);

// Same loss plus its exact gradient with respect to the logits (zero where
// the clamp is active).
LossGrad nll_loss_grad(std::span<const double> hazard_logits,
                       const SurvLabel& label);

// Risk score: sum of per-bin hazards (expected cumulative hazard proxy).
// Higher means worse prognosis.
double risk_from_hazards(std::span<const double> hazard_logits);

// Concordance index. A pair (i, j) is comparable iff i has an observed
// event and time_bin_i < time_bin_j; credit 1 if risk_i > risk_j, 0.5 on
// ties. Throws std::runtime_error when no pair is comparable.
double concordance_index(std::span<const double> risks,
                         std::span<const SurvLabel> labels);

}  // namespace tvmerge::surv
