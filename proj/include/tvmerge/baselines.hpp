#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "tvmerge/nn.hpp"
#include "tvmerge/steph.hpp"

namespace tvmerge::baselines {

// Blockwise arithmetic mean of structure-matched models.
nn::ModelWeights model_average(std::span<const nn::ModelWeights> models);

struct AdaMergingResult {
  double w_t = 0.0;
  std::vector<double> w_sources;
  nn::ModelWeights merged;
  std::vector<double> epoch_mean_loss;
};

// Optimizes one scalar coefficient per task vector (not input-conditional)
// by gradient descent on the survival NLL of M_0 + w_t tau_t + sum_i w_i
// tau_s_i, with the standard training recipe. Coefficients start at
// 1/(m+1). Works with an empty source list (target-only).
AdaMergingResult adamerging_train(const steph::FrozenModelSet& frozen,
                                  std::span<const nn::Bag> target_train_data,
                                  const nn::TrainConfig& train_config);

// Trains only head.W / head.b; every other block is bitwise untouched.
nn::ModelWeights finetune_head(const nn::ModelWeights& model,
                               std::span<const nn::Bag> dataset,
                               const nn::TrainConfig& train_config);

enum class AblationVariant {
  kFixLambda0,
  kFixLambda0WithTargetInSources,
  kFixLambda1,
  kParamLambda,
  kParamW,
  kDenseNoSparsity,
  kFull,
};

inline constexpr std::string_view kAblationTags[] = {
    "fix_lambda_0", "fix_lambda_0_with_target_in_sources", "fix_lambda_1",
    "param_lambda", "param_w", "dense_no_sparsity", "full",
};

AblationVariant parse_ablation_tag(std::string_view tag);
std::string_view ablation_tag(AblationVariant variant);

struct EvalMetrics {
  double c_index = 0.0;
  double mean_nll = 0.0;
};

// Mean survival NLL and concordance of risk scores over a bag set.
EvalMetrics evaluate_model(const nn::ModelWeights& model,
                           std::span<const nn::Bag> bags);
EvalMetrics evaluate_merge(const steph::HyperNet& net,
                           const steph::FrozenModelSet& frozen,
                           std::span<const nn::Bag> bags, std::size_t k);

struct AblationOutcome {
  AblationVariant variant;
  steph::StephTrainResult trained;
  // The frozen set and merge config the variant actually ran with (the
  // target-in-sources variant grows the pool; dense sets k = m).
  steph::FrozenModelSet frozen;
  steph::MergeConfig merge;
  EvalMetrics train_metrics;
  EvalMetrics test_metrics;
};

// Configures and trains one controlled variant of the merge method.
AblationOutcome run_ablation(AblationVariant variant,
                             const steph::FrozenModelSet& frozen,
                             std::span<const nn::Bag> train_bags,
                             std::span<const nn::Bag> test_bags,
                             const steph::MergeConfig& merge_config,
                             const nn::TrainConfig& train_config);

}  // namespace tvmerge::baselines
