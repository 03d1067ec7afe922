#include "tvmerge/baselines.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

#include "tvmerge/rng.hpp"
#include "tvmerge/survival.hpp"

namespace tvmerge::baselines {

nn::ModelWeights model_average(std::span<const nn::ModelWeights> models) {
  if (models.empty()) {
    throw std::invalid_argument("model_average: empty model list");
  }
  nn::ModelWeights avg{models[0].config, nn::zeros_like(models[0].params)};
  for (const nn::ModelWeights& m : models) {
    if (m.config != avg.config) {
      throw std::invalid_argument("model_average: config mismatch");
    }
    nn::add_scaled(avg.params, m.params, 1.0);
  }
  nn::scale_inplace(avg.params, 1.0 / static_cast<double>(models.size()));
  return avg;
}

AdaMergingResult adamerging_train(const steph::FrozenModelSet& frozen,
                                  std::span<const nn::Bag> target_train_data,
                                  const nn::TrainConfig& train_config) {
  frozen.validate();
  const std::size_t m = frozen.tau_sources.size();

  // The m+1 merge coefficients live in a one-block set so the shared AdamW
  // step applies unchanged. Order: target first, then the sources.
  nn::BlockSet coef;
  coef.blocks = {{"coef", linalg::Matrix(m + 1, 1)}};
  const double init = 1.0 / static_cast<double>(m + 1);
  for (double& v : coef.blocks[0].value.data) v = init;

  auto assemble = [&](const nn::BlockSet& c) {
    nn::ModelWeights merged = frozen.m_zero;
    nn::add_scaled(merged.params, frozen.tau_t.blocks, c.blocks[0].value.data[0]);
    for (std::size_t i = 0; i < m; ++i) {
      nn::add_scaled(merged.params, frozen.tau_sources[i].blocks,
                     c.blocks[0].value.data[i + 1]);
    }
    return merged;
  };

  AdaMergingResult result;
  if (train_config.epochs > 0) {
    if (target_train_data.empty()) {
      throw std::invalid_argument("adamerging: training data is empty");
    }
    const std::size_t n = target_train_data.size();
    const std::size_t steps_per_epoch =
        (n + train_config.accumulation_bags - 1) /
        train_config.accumulation_bags;
    nn::LrSchedule schedule{train_config.learning_rate,
                            train_config.warmup_epochs * steps_per_epoch,
                            train_config.epochs * steps_per_epoch};
    nn::AdamWState state = nn::make_adamw_state(coef);
    rng::Stream shuffle_stream(
        rng::derive_seed(train_config.seed, "shuffle"));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    nn::BlockSet accum = nn::zeros_like(coef);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train_config.epochs; ++epoch) {
      shuffle_stream.shuffle(order);
      double epoch_loss = 0.0;
      std::size_t pending = 0;
      for (std::size_t pos = 0; pos < n; ++pos) {
        const nn::Bag& bag = target_train_data[order[pos]];
        nn::ModelWeights merged = assemble(coef);
        nn::BackwardResult br =
            nn::backward(merged, bag, [&bag](std::span<const double> logits) {
              return surv::nll_loss_grad(logits, bag.label);
            });
        epoch_loss += br.loss;
        // d loss / d coefficient = <dL/dW, tau>.
        nn::BlockSet g = nn::zeros_like(coef);
        g.blocks[0].value.data[0] = nn::dot(br.grads, frozen.tau_t.blocks);
        for (std::size_t i = 0; i < m; ++i) {
          g.blocks[0].value.data[i + 1] =
              nn::dot(br.grads, frozen.tau_sources[i].blocks);
        }
        nn::add_scaled(accum, g, 1.0);
        ++pending;
        if (pending == train_config.accumulation_bags || pos + 1 == n) {
          nn::scale_inplace(accum, 1.0 / static_cast<double>(pending));
          nn::adamw_step(coef, state, accum, ++step, schedule,
                         train_config.weight_decay);
          accum = nn::zeros_like(coef);
          pending = 0;
        }
      }
      result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
    }
  }

  result.w_t = coef.blocks[0].value.data[0];
  result.w_sources.assign(coef.blocks[0].value.data.begin() + 1,
                          coef.blocks[0].value.data.end());
  result.merged = assemble(coef);
  return result;
}

nn::ModelWeights finetune_head(const nn::ModelWeights& model,
                               std::span<const nn::Bag> dataset,
                               const nn::TrainConfig& train_config) {
  nn::TrainResult r =
      nn::train_from(model, dataset, train_config, [](const std::string& name) {
        return name.rfind("head.", 0) == 0;
      });
  return r.weights;
}

AblationVariant parse_ablation_tag(std::string_view tag) {
  for (std::size_t i = 0; i < std::size(kAblationTags); ++i) {
    if (kAblationTags[i] == tag) return static_cast<AblationVariant>(i);
  }
  throw std::invalid_argument("unknown ablation variant: " + std::string(tag));
}

std::string_view ablation_tag(AblationVariant variant) {
  return kAblationTags[static_cast<std::size_t>(variant)];
}

EvalMetrics evaluate_model(const nn::ModelWeights& model,
                           std::span<const nn::Bag> bags) {
  if (bags.empty()) {
    throw std::invalid_argument("evaluate_model: empty bag set");
  }
  EvalMetrics metrics;
  std::vector<double> risks;
  std::vector<surv::SurvLabel> labels;
  risks.reserve(bags.size());
  labels.reserve(bags.size());
  double loss_sum = 0.0;
  for (const nn::Bag& bag : bags) {
    nn::ForwardResult fr = nn::forward(model, bag);
    loss_sum += surv::nll_loss(fr.hazard_logits, bag.label);
    risks.push_back(surv::risk_from_hazards(fr.hazard_logits));
    labels.push_back(bag.label);
  }
  metrics.mean_nll = loss_sum / static_cast<double>(bags.size());
  metrics.c_index = surv::concordance_index(risks, labels);
  return metrics;
}

EvalMetrics evaluate_merge(const steph::HyperNet& net,
                           const steph::FrozenModelSet& frozen,
                           std::span<const nn::Bag> bags, std::size_t k) {
  if (bags.empty()) {
    throw std::invalid_argument("evaluate_merge: empty bag set");
  }
  EvalMetrics metrics;
  std::vector<double> risks;
  std::vector<surv::SurvLabel> labels;
  risks.reserve(bags.size());
  labels.reserve(bags.size());
  double loss_sum = 0.0;
  for (const nn::Bag& bag : bags) {
    steph::Prediction p = steph::predict(net, frozen, bag, k);
    loss_sum += surv::nll_loss(p.hazard_logits, bag.label);
    risks.push_back(surv::risk_from_hazards(p.hazard_logits));
    labels.push_back(bag.label);
  }
  metrics.mean_nll = loss_sum / static_cast<double>(bags.size());
  metrics.c_index = surv::concordance_index(risks, labels);
  return metrics;
}

AblationOutcome run_ablation(AblationVariant variant,
                             const steph::FrozenModelSet& frozen,
                             std::span<const nn::Bag> train_bags,
                             std::span<const nn::Bag> test_bags,
                             const steph::MergeConfig& merge_config,
                             const nn::TrainConfig& train_config) {
  AblationOutcome outcome;
  outcome.variant = variant;
  outcome.frozen = frozen;
  outcome.merge = merge_config;

  steph::HyperConfig hc;
  hc.d_in = frozen.m_zero.config.d_in;
  hc.d_hyper = merge_config.d_hyper;
  hc.m = merge_config.m;

  switch (variant) {
    case AblationVariant::kFull:
      break;
    case AblationVariant::kDenseNoSparsity:
      outcome.merge.k = outcome.merge.m;
      break;
    case AblationVariant::kFixLambda1:
      hc.lambda_mode = steph::HeadMode::kFixed;
      hc.fixed_lambda = 1.0;
      break;
    case AblationVariant::kFixLambda0:
      hc.lambda_mode = steph::HeadMode::kFixed;
      hc.fixed_lambda = 0.0;
      break;
    case AblationVariant::kFixLambda0WithTargetInSources:
      hc.lambda_mode = steph::HeadMode::kFixed;
      hc.fixed_lambda = 0.0;
      outcome.frozen.tau_sources.push_back(frozen.tau_t);
      outcome.merge.m += 1;
      hc.m = outcome.merge.m;
      break;
    case AblationVariant::kParamLambda:
      hc.lambda_mode = steph::HeadMode::kParam;
      break;
    case AblationVariant::kParamW:
      hc.w_mode = steph::HeadMode::kParam;
      break;
  }

  steph::HyperNet initial = steph::init_hypernet(hc, train_config.seed);
  outcome.trained = steph::train_steph(train_bags, outcome.frozen,
                                       outcome.merge, train_config, &initial);
  outcome.train_metrics = evaluate_merge(outcome.trained.net, outcome.frozen,
                                         train_bags, outcome.merge.k);
  outcome.test_metrics = evaluate_merge(outcome.trained.net, outcome.frozen,
                                        test_bags, outcome.merge.k);
  return outcome;
}

}  // namespace tvmerge::baselines
