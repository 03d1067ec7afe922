#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tvmerge/linalg.hpp"
#include "tvmerge/survival.hpp"

namespace tvmerge::nn {

struct NetConfig {
  std::size_t d_in = 32;
  std::size_t d_embed = 64;
  std::size_t d_attn = 32;
  std::size_t n_bins = 4;

  bool operator==(const NetConfig&) const = default;
  void validate() const;
};

// An ordered set of named parameter blocks. Biases and the attention scoring
// vector are single-column matrices. All blockwise arithmetic used by the
// optimizer and by task-vector algebra lives on this type.
struct NamedBlock {
  std::string name;
  linalg::Matrix value;

  bool operator==(const NamedBlock&) const = default;
};

struct BlockSet {
  std::vector<NamedBlock> blocks;

  const linalg::Matrix& at(std::string_view name) const;
  linalg::Matrix& at(std::string_view name);
  bool same_structure(const BlockSet& o) const;
  bool operator==(const BlockSet&) const = default;
};

BlockSet zeros_like(const BlockSet& a);
void add_scaled(BlockSet& dst, const BlockSet& src, double s);  // dst += s*src
void scale_inplace(BlockSet& a, double s);
double dot(const BlockSet& a, const BlockSet& b);
double max_abs_diff(const BlockSet& a, const BlockSet& b);
void require_same_structure(const BlockSet& a, const BlockSet& b,
                            std::string_view what);

// Full weight set of one MIL prognostic network:
//   emb.W1, emb.b1, emb.W2, emb.b2   two-layer ReLU instance embedding
//   attn.V, attn.U, attn.w           gated attention pooling
//   head.W, head.b                   discrete-hazard prediction layer
struct ModelWeights {
  NetConfig config;
  BlockSet params;

  bool operator==(const ModelWeights&) const = default;
};

// One multi-instance sample: an n x d_in instance matrix plus the survival
// label of the whole bag.
struct Bag {
  linalg::Matrix instances;
  surv::SurvLabel label;
};

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  std::size_t warmup_epochs = 1;
  double weight_decay = 1e-5;
  std::size_t accumulation_bags = 16;
  std::uint64_t seed = 1;

  bool operator==(const TrainConfig&) const = default;
  void validate() const;
};

using GradientSet = BlockSet;

BlockSet make_weight_blocks(const NetConfig& config);

// Scaled uniform init with bound 1/sqrt(fan_in) per block; biases zero.
// Deterministic given the seed.
ModelWeights init_weights(const NetConfig& config, std::uint64_t seed);

// Row i = ReLU(W2 * ReLU(W1 * x_i + b1) + b2).
linalg::Matrix embed_instances(const ModelWeights& weights,
                               const linalg::Matrix& instances);

struct AttentionResult {
  std::vector<double> bag_vector;
  std::vector<double> attention;  // softmax of gated scores; sums to 1
};

AttentionResult gated_attention(const ModelWeights& weights,
                                const linalg::Matrix& embeddings);

struct ForwardResult {
  std::vector<double> hazard_logits;
  std::vector<double> attention;
};

ForwardResult forward(const ModelWeights& weights, const Bag& bag);

// Number of base-architecture forward passes executed so far (process-wide
// instrumentation used by inference-cost tests).
std::uint64_t forward_pass_count();
void reset_forward_pass_count();

using LossFn = std::function<surv::LossGrad(std::span<const double> logits)>;

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

// Reverse-mode gradients of loss_fn(forward(weights, bag)) with respect to
// every weight block.
BackwardResult backward(const ModelWeights& weights, const Bag& bag,
                        const LossFn& loss_fn);

struct LrSchedule {
  double base_lr = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  // Linear warmup to base_lr, then cosine annealing to exactly 0 at
  // step == total_steps. step is 1-based.
  double lr_at(std::size_t step) const;
};

struct AdamWState {
  BlockSet m;
  BlockSet v;
};

AdamWState make_adamw_state(const BlockSet& params);

// Standard AdamW step (beta1=0.9, beta2=0.999, eps=1e-8) with decoupled
// weight decay. Updates params and state in place; blocks rejected by
// `trainable` are left untouched entirely. step_index is 1-based.
void adamw_step(BlockSet& params, AdamWState& state, const BlockSet& grads,
                std::size_t step_index, const LrSchedule& schedule,
                double weight_decay,
                const std::function<bool(const std::string&)>& trainable = {});

struct TrainLog {
  std::vector<double> epoch_mean_loss;
  bool all_censored_warning = false;
};

struct TrainResult {
  ModelWeights weights;
  TrainLog log;
};

// Core loop shared by all model training: per-bag NLL backward, gradient
// accumulation with mean semantics, AdamW with warmup+cosine schedule,
// epoch-shuffled bag order from a stream derived from config.seed.
// An optional block filter freezes everything it rejects.
TrainResult train_from(const ModelWeights& init, std::span<const Bag> dataset,
                       const TrainConfig& config,
                       const std::function<bool(const std::string&)>& trainable = {});

// Initializes from config.seed and trains on the full dataset.
TrainResult train_cancer_specific(std::span<const Bag> dataset,
                                  const NetConfig& net_config,
                                  const TrainConfig& train_config);

// Checkpoint container: magic "TVMERGE-CKPT-v1", NetConfig, init seed, and
// every named block with its shape. Binary little-endian; bit-reproducible.
void save_checkpoint(const std::filesystem::path& path,
                     const ModelWeights& weights, std::uint64_t init_seed);

struct Checkpoint {
  ModelWeights weights;
  std::uint64_t init_seed = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tvmerge::nn
