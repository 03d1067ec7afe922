#include "tvmerge/survival.hpp"

#include <cmath>
#include <stdexcept>

namespace tvmerge::surv {

namespace {

constexpr double kHazardFloor = 1e-7;
constexpr double kHazardCeil = 1.0 - 1e-7;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_label(std::size_t n_bins, const SurvLabel& label) {
  if (label.time_bin >= n_bins)
    throw std::invalid_argument("nll_loss: time_bin out of range");
}

}  // namespace

double nll_loss(std::span<const double> hazard_logits, const SurvLabel& label) {
  check_label(hazard_logits.size(), label);
  double loss = 0.0;
  const std::size_t y = label.time_bin;
  for (std::size_t k = 0; k <= y; ++k) {
    const double h =
        std::min(kHazardCeil, std::max(kHazardFloor, sigmoid(hazard_logits[k])));
    if (label.event && k == y) {
      loss -= std::log(h);
    } else {
      loss -= std::log(1.0 - h);
    }
  }
  return loss;
}

LossGrad nll_loss_grad(std::span<const double> hazard_logits,
                       const SurvLabel& label) {
  check_label(hazard_logits.size(), label);
  LossGrad out;
  out.dlogits.assign(hazard_logits.size(), 0.0);
  const std::size_t y = label.time_bin;
  for (std::size_t k = 0; k <= y; ++k) {
    const double raw = sigmoid(hazard_logits[k]);
    const bool clamped = raw < kHazardFloor || raw > kHazardCeil;
    const double h = std::min(kHazardCeil, std::max(kHazardFloor, raw));
    const double dh_dx = clamped ? 0.0 : raw * (1.0 - raw);
    if (label.event && k == y) {
      out.loss -= std::log(h);
      out.dlogits[k] = -dh_dx / h;
    } else {
      out.loss -= std::log(1.0 - h);
      out.dlogits[k] = dh_dx / (1.0 - h);
    }
  }
  return out;
}

double risk_from_hazards(std::span<const double> hazard_logits) {
  double r = 0.0;
  for (double x : hazard_logits) r += sigmoid(x);
  return r;
}

double concordance_index(std::span<const double> risks,
                         std::span<const SurvLabel> labels) {
  if (risks.size() != labels.size())
    throw std::invalid_argument("concordance_index: size mismatch");
  if (risks.size() < 2)
    throw std::invalid_argument("concordance_index: need at least 2 samples");

  double credits = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (!labels[i].event) continue;
    for (std::size_t j = 0; j < risks.size(); ++j) {
      if (labels[i].time_bin >= labels[j].time_bin) continue;
      ++comparable;
      if (risks[i] > risks[j])
        credits += 1.0;
      else if (risks[i] == risks[j])
        credits += 0.5;
    }
  }
  if (comparable == 0)
    throw std::runtime_error("concordance_index: no comparable pairs");
  return credits / static_cast<double>(comparable);
}

}  // namespace tvmerge::surv
