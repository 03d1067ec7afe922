#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/nn.hpp"
#include "tvmerge/taskvec.hpp"

namespace tvmerge::steph {

// How a hypernetwork head produces its per-source outputs:
//   kHyper - linear layer on the shared encoder output (the full method);
//   kParam - free per-source logits shared across inputs (ablation);
//   kFixed - constant value, nothing trained (ablation).
enum class HeadMode { kHyper, kParam, kFixed };

struct HyperConfig {
  std::size_t d_in = 32;
  std::size_t d_hyper = 64;
  std::size_t m = 1;  // source count the heads emit
  HeadMode lambda_mode = HeadMode::kHyper;
  HeadMode w_mode = HeadMode::kHyper;
  double fixed_lambda = 1.0;  // used when lambda_mode == kFixed
  double fixed_w = 1.0;       // used when w_mode == kFixed

  bool operator==(const HyperConfig&) const = default;
  void validate() const;
};

// Mean-pool MIL encoder shared by both heads, plus one linear head per
// output family. Blocks: enc.E, enc.b, lam.W, lam.b, agg.W, agg.b. Param
// heads use only their bias block; fixed heads use none.
struct HyperNet {
  HyperConfig config;
  nn::BlockSet params;
};

HyperNet init_hypernet(const HyperConfig& config, std::uint64_t seed);

struct HyperOutput {
  std::vector<double> lambda;  // componentwise in [0, 1]
  std::vector<double> w;       // componentwise >= 0
};

// z = mean_i ReLU(E x_i + b); lambda = sigmoid(lam head), w = softplus(agg
// head). Permutation-invariant in the bag rows.
HyperOutput hyper_forward(const HyperNet& net,
                          const linalg::Matrix& instances);

struct MergeConfig {
  std::size_t m = 12;    // number of source task vectors (13-task family)
  std::size_t k = 5;     // top-K mixtures kept
  double beta = 0.05;    // mixup-regularizer coefficient
  double gamma = 0.005;  // aggregation-regularizer coefficient
  std::size_t d_hyper = 64;

  bool operator==(const MergeConfig&) const = default;
  void validate() const;
};

// Immutable bundle the merge operates on: shared init, target task vector,
// and the m source task vectors. Never modified by training.
struct FrozenModelSet {
  nn::ModelWeights m_zero;
  taskvec::TaskVector tau_t;
  std::vector<taskvec::TaskVector> tau_sources;

  void validate() const;
  bool operator==(const FrozenModelSet&) const = default;
};

// M_0 + sum over the top-k of w of w_i * (lambda_i tau_t + (1-lambda_i)
// tau_s_i).
nn::ModelWeights assemble_target(const FrozenModelSet& frozen,
                                 const HyperOutput& out, std::size_t k);

struct StephLossParts {
  double total = 0.0;
  double l_sl = 0.0;   // survival NLL
  double l_mix = 0.0;  // mean squared lambda over the selected mixtures
  double l_agg = 0.0;  // squared log-sum-exp of all w
};

// total = l_sl + beta * l_mix + gamma * l_agg with
// l_mix = (sum over top-k of w of lambda_j^2) / k and
// l_agg = (log sum_i exp(w_i))^2.
StephLossParts steph_loss(std::span<const double> hazard_logits,
                          const surv::SurvLabel& label, const HyperOutput& out,
                          std::size_t k, double beta, double gamma);

// Full loss of the assembled model on one bag. forced_topk, when given,
// replaces the argmax selection (finite-difference checks need a selection
// that does not flip under parameter perturbation).
StephLossParts steph_eval(const HyperNet& net, const FrozenModelSet& frozen,
                          const nn::Bag& bag, const MergeConfig& config,
                          const std::vector<std::size_t>* forced_topk = nullptr);

struct StephBackwardResult {
  StephLossParts loss;
  HyperOutput out;
  std::vector<std::size_t> topk;
  nn::BlockSet grads;  // same structure as net.params
};

// Gradients of the full loss with respect to the hypernet parameters only;
// the frozen models never receive gradients. Top-K selection is treated as
// locally constant.
StephBackwardResult steph_backward(const HyperNet& net,
                                   const FrozenModelSet& frozen,
                                   const nn::Bag& bag,
                                   const MergeConfig& config);

struct TrajectoryPoint {
  std::size_t epoch = 0;               // 1-based
  std::vector<double> mean_lambda;     // per source, averaged over bags
  std::vector<double> mean_w;
};

struct StephTrainLog {
  std::vector<double> epoch_mean_loss;
  std::vector<TrajectoryPoint> trajectory;
};

struct StephTrainResult {
  HyperNet net;
  StephTrainLog log;
};

// Trains the hypernetworks with the same optimizer/schedule/accumulation
// recipe as base-model training. When initial is null a fresh fully
// hypernetwork-driven net is initialized from train_config.seed; ablation
// variants pass their own initial net (head modes preconfigured).
StephTrainResult train_steph(std::span<const nn::Bag> train_data,
                             const FrozenModelSet& frozen,
                             const MergeConfig& merge_config,
                             const nn::TrainConfig& train_config,
                             const HyperNet* initial = nullptr);

struct Prediction {
  std::vector<double> hazard_logits;
  HyperOutput out;
};

// One hyper_forward, one assembly, one base-architecture forward: exactly
// one merged model is evaluated per bag regardless of m.
Prediction predict(const HyperNet& net, const FrozenModelSet& frozen,
                   const nn::Bag& bag, std::size_t k);

// Columns: epoch, source_id, mean_lambda, mean_w.
std::string trajectory_tsv(const StephTrainLog& log);

}  // namespace tvmerge::steph
