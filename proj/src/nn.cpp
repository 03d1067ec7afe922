#include "tvmerge/nn.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge::nn {

namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct BlockSpec {
  const char* name;
  std::size_t rows;
  std::size_t cols;
  std::size_t fan_in;  // 0 marks a bias (left zero at init)
};

std::vector<BlockSpec> block_specs(const NetConfig& c) {
  return {
      {"emb.W1", c.d_embed, c.d_in, c.d_in},
      {"emb.b1", c.d_embed, 1, 0},
      {"emb.W2", c.d_embed, c.d_embed, c.d_embed},
      {"emb.b2", c.d_embed, 1, 0},
      {"attn.V", c.d_attn, c.d_embed, c.d_embed},
      {"attn.U", c.d_attn, c.d_embed, c.d_embed},
      {"attn.w", c.d_attn, 1, c.d_attn},
      {"head.W", c.n_bins, c.d_embed, c.d_embed},
      {"head.b", c.n_bins, 1, 0},
  };
}

// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
  linalg::Matrix u1, r1, u2, h;  // n x d_embed
  linalg::Matrix tv, gv;         // n x d_attn
  std::vector<double> attention;
  std::vector<double> bag_vector;
  std::vector<double> logits;
};

ForwardCache run_forward(const ModelWeights& weights,
                         const linalg::Matrix& x) {
  const NetConfig& c = weights.config;
  if (x.cols != c.d_in) {
    throw std::invalid_argument("instance matrix has " +
                                std::to_string(x.cols) + " columns, expected " +
                                std::to_string(c.d_in));
  }
  if (x.rows == 0) {
    throw std::invalid_argument("bag must contain at least one instance");
  }

  const linalg::Matrix& W1 = weights.params.at("emb.W1");
  const linalg::Matrix& b1 = weights.params.at("emb.b1");
  const linalg::Matrix& W2 = weights.params.at("emb.W2");
  const linalg::Matrix& b2 = weights.params.at("emb.b2");
  const linalg::Matrix& V = weights.params.at("attn.V");
  const linalg::Matrix& U = weights.params.at("attn.U");
  const linalg::Matrix& w = weights.params.at("attn.w");
  const linalg::Matrix& Wh = weights.params.at("head.W");
  const linalg::Matrix& bh = weights.params.at("head.b");

  const std::size_t n = x.rows;
  ForwardCache f;
  f.u1 = linalg::Matrix(n, c.d_embed);
  f.r1 = linalg::Matrix(n, c.d_embed);
  f.u2 = linalg::Matrix(n, c.d_embed);
  f.h = linalg::Matrix(n, c.d_embed);
  f.tv = linalg::Matrix(n, c.d_attn);
  f.gv = linalg::Matrix(n, c.d_attn);

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &x.data[i * c.d_in];
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      double acc = b1.data[j];
      const double* wj = &W1.data[j * c.d_in];
      for (std::size_t l = 0; l < c.d_in; ++l) acc += wj[l] * xi[l];
      f.u1(i, j) = acc;
      f.r1(i, j) = acc > 0.0 ? acc : 0.0;
    }
    const double* ri = &f.r1.data[i * c.d_embed];
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      double acc = b2.data[j];
      const double* wj = &W2.data[j * c.d_embed];
      for (std::size_t l = 0; l < c.d_embed; ++l) acc += wj[l] * ri[l];
      f.u2(i, j) = acc;
      f.h(i, j) = acc > 0.0 ? acc : 0.0;
    }
    const double* hi = &f.h.data[i * c.d_embed];
    double score = 0.0;
    for (std::size_t k = 0; k < c.d_attn; ++k) {
      double av = 0.0;
      double au = 0.0;
      const double* vk = &V.data[k * c.d_embed];
      const double* uk = &U.data[k * c.d_embed];
      for (std::size_t l = 0; l < c.d_embed; ++l) {
        av += vk[l] * hi[l];
        au += uk[l] * hi[l];
      }
      double t = std::tanh(av);
      double g = sigmoid(au);
      f.tv(i, k) = t;
      f.gv(i, k) = g;
      score += w.data[k] * t * g;
    }
    scores[i] = score;
  }

  // Softmax over instance scores with max subtraction.
  double smax = scores[0];
  for (double s : scores) smax = std::max(smax, s);
  f.attention.resize(n);
  double ssum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    f.attention[i] = std::exp(scores[i] - smax);
    ssum += f.attention[i];
  }
  for (double& a : f.attention) a /= ssum;

  f.bag_vector.assign(c.d_embed, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = f.attention[i];
    const double* hi = &f.h.data[i * c.d_embed];
    for (std::size_t j = 0; j < c.d_embed; ++j) f.bag_vector[j] += a * hi[j];
  }

  f.logits.resize(c.n_bins);
  for (std::size_t k = 0; k < c.n_bins; ++k) {
    double acc = bh.data[k];
    const double* wk = &Wh.data[k * c.d_embed];
    for (std::size_t j = 0; j < c.d_embed; ++j) acc += wk[j] * f.bag_vector[j];
    f.logits[k] = acc;
  }

  g_forward_passes.fetch_add(1, std::memory_order_relaxed);
  return f;
}

constexpr std::string_view kCheckpointMagic = "TVMERGE-CKPT-v1";

}  // namespace

void NetConfig::validate() const {
  if (d_in < 1 || d_embed < 1 || d_attn < 1 || n_bins < 1) {
    throw std::domain_error("all network dimensions must be >= 1");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::domain_error("epochs must be >= 1");
  if (warmup_epochs >= epochs) {
    throw std::domain_error("warmup_epochs must be < epochs");
  }
  if (!(learning_rate > 0.0)) {
    throw std::domain_error("learning_rate must be positive");
  }
  if (weight_decay < 0.0) {
    throw std::domain_error("weight_decay must be nonnegative");
  }
  if (accumulation_bags < 1) {
    throw std::domain_error("accumulation_bags must be >= 1");
  }
}

const linalg::Matrix& BlockSet::at(std::string_view name) const {
  for (const NamedBlock& b : blocks) {
    if (b.name == name) return b.value;
  }
  throw std::invalid_argument("unknown block: " + std::string(name));
}

linalg::Matrix& BlockSet::at(std::string_view name) {
  for (NamedBlock& b : blocks) {
    if (b.name == name) return b.value;
  }
  throw std::invalid_argument("unknown block: " + std::string(name));
}

bool BlockSet::same_structure(const BlockSet& o) const {
  if (blocks.size() != o.blocks.size()) return false;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name != o.blocks[i].name) return false;
    if (!blocks[i].value.same_shape(o.blocks[i].value)) return false;
  }
  return true;
}

BlockSet zeros_like(const BlockSet& a) {
  BlockSet z;
  z.blocks.reserve(a.blocks.size());
  for (const NamedBlock& b : a.blocks) {
    z.blocks.push_back({b.name, linalg::Matrix(b.value.rows, b.value.cols)});
  }
  return z;
}

void require_same_structure(const BlockSet& a, const BlockSet& b,
                            std::string_view what) {
  if (!a.same_structure(b)) {
    throw std::invalid_argument(std::string(what) +
                                ": block structures do not match");
  }
}

void add_scaled(BlockSet& dst, const BlockSet& src, double s) {
  require_same_structure(dst, src, "add_scaled");
  for (std::size_t i = 0; i < dst.blocks.size(); ++i) {
    linalg::axpy(s, src.blocks[i].value, dst.blocks[i].value);
  }
}

void scale_inplace(BlockSet& a, double s) {
  for (NamedBlock& b : a.blocks) linalg::scale_inplace(b.value, s);
}

double dot(const BlockSet& a, const BlockSet& b) {
  require_same_structure(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    acc += linalg::dot(a.blocks[i].value, b.blocks[i].value);
  }
  return acc;
}

double max_abs_diff(const BlockSet& a, const BlockSet& b) {
  require_same_structure(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    const auto& x = a.blocks[i].value.data;
    const auto& y = b.blocks[i].value.data;
    for (std::size_t j = 0; j < x.size(); ++j) {
      m = std::max(m, std::abs(x[j] - y[j]));
    }
  }
  return m;
}

BlockSet make_weight_blocks(const NetConfig& config) {
  config.validate();
  BlockSet set;
  for (const BlockSpec& spec : block_specs(config)) {
    set.blocks.push_back({spec.name, linalg::Matrix(spec.rows, spec.cols)});
  }
  return set;
}

ModelWeights init_weights(const NetConfig& config, std::uint64_t seed) {
  ModelWeights w{config, make_weight_blocks(config)};
  rng::Stream stream(rng::derive_seed(seed, "init"));
  const auto specs = block_specs(config);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].fan_in == 0) continue;  // biases stay zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(specs[i].fan_in));
    for (double& v : w.params.blocks[i].value.data) {
      v = stream.uniform(-bound, bound);
    }
  }
  return w;
}

linalg::Matrix embed_instances(const ModelWeights& weights,
                               const linalg::Matrix& instances) {
  ForwardCache f = run_forward(weights, instances);
  return f.h;
}

AttentionResult gated_attention(const ModelWeights& weights,
                                const linalg::Matrix& embeddings) {
  // Runs the attention stage alone by treating the rows as precomputed
  // embeddings: score, softmax, weighted sum.
  const NetConfig& c = weights.config;
  if (embeddings.cols != c.d_embed) {
    throw std::invalid_argument("embedding matrix has " +
                                std::to_string(embeddings.cols) +
                                " columns, expected " +
                                std::to_string(c.d_embed));
  }
  if (embeddings.rows == 0) {
    throw std::invalid_argument("attention needs at least one instance");
  }
  const linalg::Matrix& V = weights.params.at("attn.V");
  const linalg::Matrix& U = weights.params.at("attn.U");
  const linalg::Matrix& w = weights.params.at("attn.w");

  const std::size_t n = embeddings.rows;
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* hi = &embeddings.data[i * c.d_embed];
    double score = 0.0;
    for (std::size_t k = 0; k < c.d_attn; ++k) {
      double av = 0.0;
      double au = 0.0;
      const double* vk = &V.data[k * c.d_embed];
      const double* uk = &U.data[k * c.d_embed];
      for (std::size_t l = 0; l < c.d_embed; ++l) {
        av += vk[l] * hi[l];
        au += uk[l] * hi[l];
      }
      score += w.data[k] * std::tanh(av) * sigmoid(au);
    }
    scores[i] = score;
  }

  AttentionResult res;
  double smax = scores[0];
  for (double s : scores) smax = std::max(smax, s);
  res.attention.resize(n);
  double ssum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    res.attention[i] = std::exp(scores[i] - smax);
    ssum += res.attention[i];
  }
  for (double& a : res.attention) a /= ssum;

  res.bag_vector.assign(c.d_embed, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = res.attention[i];
    const double* hi = &embeddings.data[i * c.d_embed];
    for (std::size_t j = 0; j < c.d_embed; ++j) res.bag_vector[j] += a * hi[j];
  }
  return res;
}

ForwardResult forward(const ModelWeights& weights, const Bag& bag) {
  ForwardCache f = run_forward(weights, bag.instances);
  return {std::move(f.logits), std::move(f.attention)};
}

std::uint64_t forward_pass_count() {
  return g_forward_passes.load(std::memory_order_relaxed);
}

void reset_forward_pass_count() {
  g_forward_passes.store(0, std::memory_order_relaxed);
}

BackwardResult backward(const ModelWeights& weights, const Bag& bag,
                        const LossFn& loss_fn) {
  const NetConfig& c = weights.config;
  const linalg::Matrix& x = bag.instances;
  ForwardCache f = run_forward(weights, x);

  surv::LossGrad lg = loss_fn(f.logits);
  if (!std::isfinite(lg.loss)) {
    throw std::runtime_error("non-finite loss in backward");
  }
  if (lg.dlogits.size() != c.n_bins) {
    throw std::invalid_argument("loss gradient size does not match n_bins");
  }

  const linalg::Matrix& W2 = weights.params.at("emb.W2");
  const linalg::Matrix& V = weights.params.at("attn.V");
  const linalg::Matrix& U = weights.params.at("attn.U");
  const linalg::Matrix& w = weights.params.at("attn.w");
  const linalg::Matrix& Wh = weights.params.at("head.W");

  BackwardResult out;
  out.loss = lg.loss;
  out.grads = zeros_like(weights.params);
  linalg::Matrix& dW1 = out.grads.at("emb.W1");
  linalg::Matrix& db1 = out.grads.at("emb.b1");
  linalg::Matrix& dW2 = out.grads.at("emb.W2");
  linalg::Matrix& db2 = out.grads.at("emb.b2");
  linalg::Matrix& dV = out.grads.at("attn.V");
  linalg::Matrix& dU = out.grads.at("attn.U");
  linalg::Matrix& dw = out.grads.at("attn.w");
  linalg::Matrix& dWh = out.grads.at("head.W");
  linalg::Matrix& dbh = out.grads.at("head.b");

  const std::size_t n = x.rows;

  // Head layer: logits = Wh * z + bh.
  std::vector<double> dz(c.d_embed, 0.0);
  for (std::size_t k = 0; k < c.n_bins; ++k) {
    const double g = lg.dlogits[k];
    dbh.data[k] = g;
    const double* whk = &Wh.data[k * c.d_embed];
    double* dwhk = &dWh.data[k * c.d_embed];
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      dwhk[j] = g * f.bag_vector[j];
      dz[j] += g * whk[j];
    }
  }

  // Softmax backward: ds_i = a_i * (da_i - sum_j a_j da_j) where
  // da_i = <dz, h_i>.
  std::vector<double> da(n);
  double a_dot_da = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* hi = &f.h.data[i * c.d_embed];
    double acc = 0.0;
    for (std::size_t j = 0; j < c.d_embed; ++j) acc += dz[j] * hi[j];
    da[i] = acc;
    a_dot_da += f.attention[i] * acc;
  }

  std::vector<double> dpre_v(c.d_attn);
  std::vector<double> dpre_u(c.d_attn);
  std::vector<double> dh(c.d_embed);
  std::vector<double> du2(c.d_embed);
  std::vector<double> dr1(c.d_embed);
  for (std::size_t i = 0; i < n; ++i) {
    const double ai = f.attention[i];
    const double ds = ai * (da[i] - a_dot_da);
    const double* hi = &f.h.data[i * c.d_embed];
    const double* xi = &x.data[i * c.d_in];

    // Gate backward: e = tanh(Vh) ⊙ sigmoid(Uh), s = w·e.
    for (std::size_t k = 0; k < c.d_attn; ++k) {
      const double t = f.tv(i, k);
      const double g = f.gv(i, k);
      dw.data[k] += ds * t * g;
      const double de = ds * w.data[k];
      dpre_v[k] = de * g * (1.0 - t * t);
      dpre_u[k] = de * t * g * (1.0 - g);
    }
    for (std::size_t j = 0; j < c.d_embed; ++j) dh[j] = ai * dz[j];
    for (std::size_t k = 0; k < c.d_attn; ++k) {
      const double pv = dpre_v[k];
      const double pu = dpre_u[k];
      const double* vk = &V.data[k * c.d_embed];
      const double* uk = &U.data[k * c.d_embed];
      double* dvk = &dV.data[k * c.d_embed];
      double* duk = &dU.data[k * c.d_embed];
      for (std::size_t j = 0; j < c.d_embed; ++j) {
        dvk[j] += pv * hi[j];
        duk[j] += pu * hi[j];
        dh[j] += pv * vk[j] + pu * uk[j];
      }
    }

    // Embedding MLP backward through both ReLU layers.
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      du2[j] = f.u2(i, j) > 0.0 ? dh[j] : 0.0;
      db2.data[j] += du2[j];
    }
    const double* ri = &f.r1.data[i * c.d_embed];
    std::fill(dr1.begin(), dr1.end(), 0.0);
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      const double d = du2[j];
      if (d == 0.0) continue;
      const double* w2j = &W2.data[j * c.d_embed];
      double* dw2j = &dW2.data[j * c.d_embed];
      for (std::size_t l = 0; l < c.d_embed; ++l) {
        dw2j[l] += d * ri[l];
        dr1[l] += d * w2j[l];
      }
    }
    for (std::size_t j = 0; j < c.d_embed; ++j) {
      const double d = f.u1(i, j) > 0.0 ? dr1[j] : 0.0;
      if (d == 0.0) continue;
      db1.data[j] += d;
      double* dw1j = &dW1.data[j * c.d_in];
      for (std::size_t l = 0; l < c.d_in; ++l) dw1j[l] += d * xi[l];
    }
  }
  return out;
}

double LrSchedule::lr_at(std::size_t step) const {
  if (step < 1) throw std::domain_error("schedule step is 1-based");
  if (step <= warmup_steps) {
    return base_lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

AdamWState make_adamw_state(const BlockSet& params) {
  return {zeros_like(params), zeros_like(params)};
}

void adamw_step(BlockSet& params, AdamWState& state, const BlockSet& grads,
                std::size_t step_index, const LrSchedule& schedule,
                double weight_decay,
                const std::function<bool(const std::string&)>& trainable) {
  if (step_index < 1) throw std::domain_error("step_index is 1-based");
  require_same_structure(params, grads, "adamw_step");
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  const double lr = schedule.lr_at(step_index);
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_index));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    if (trainable && !trainable(params.blocks[b].name)) continue;
    auto& p = params.blocks[b].value.data;
    auto& m = state.m.blocks[b].value.data;
    auto& v = state.v.blocks[b].value.data;
    const auto& g = grads.blocks[b].value.data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + kEps) + weight_decay * p[j]);
    }
  }
}

TrainResult train_from(const ModelWeights& init, std::span<const Bag> dataset,
                       const TrainConfig& config,
                       const std::function<bool(const std::string&)>& trainable) {
  TrainResult result{init, {}};
  if (config.epochs == 0) return result;  // explicit no-op override
  if (dataset.empty()) {
    throw std::invalid_argument("training dataset is empty");
  }
  if (config.accumulation_bags < 1) {
    throw std::domain_error("accumulation_bags must be >= 1");
  }

  bool any_event = false;
  for (const Bag& bag : dataset) any_event = any_event || bag.label.event;
  result.log.all_censored_warning = !any_event;

  const std::size_t n = dataset.size();
  const std::size_t steps_per_epoch =
      (n + config.accumulation_bags - 1) / config.accumulation_bags;
  LrSchedule schedule{config.learning_rate,
                      config.warmup_epochs * steps_per_epoch,
                      config.epochs * steps_per_epoch};

  AdamWState state = make_adamw_state(result.weights.params);
  rng::Stream shuffle_stream(rng::derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  BlockSet accum = zeros_like(result.weights.params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_stream.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t pending = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const Bag& bag = dataset[order[pos]];
      BackwardResult br = backward(result.weights, bag,
                                   [&bag](std::span<const double> logits) {
                                     return surv::nll_loss_grad(logits,
                                                                bag.label);
                                   });
      epoch_loss += br.loss;
      add_scaled(accum, br.grads, 1.0);
      ++pending;
      if (pending == config.accumulation_bags || pos + 1 == n) {
        scale_inplace(accum, 1.0 / static_cast<double>(pending));
        adamw_step(result.weights.params, state, accum, ++step, schedule,
                   config.weight_decay, trainable);
        accum = zeros_like(result.weights.params);
        pending = 0;
      }
    }
    result.log.epoch_mean_loss.push_back(epoch_loss /
                                         static_cast<double>(n));
  }
  return result;
}

TrainResult train_cancer_specific(std::span<const Bag> dataset,
                                  const NetConfig& net_config,
                                  const TrainConfig& train_config) {
  ModelWeights init = init_weights(net_config, train_config.seed);
  return train_from(init, dataset, train_config);
}

void save_checkpoint(const std::filesystem::path& path,
                     const ModelWeights& weights, std::uint64_t init_seed) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open checkpoint for writing: " +
                             path.string());
  }
  binio::write_magic(out, kCheckpointMagic);
  binio::write_u64(out, weights.config.d_in);
  binio::write_u64(out, weights.config.d_embed);
  binio::write_u64(out, weights.config.d_attn);
  binio::write_u64(out, weights.config.n_bins);
  binio::write_u64(out, init_seed);
  binio::write_u64(out, weights.params.blocks.size());
  for (const NamedBlock& b : weights.params.blocks) {
    binio::write_u64(out, b.name.size());
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    binio::write_u64(out, b.value.rows);
    binio::write_u64(out, b.value.cols);
    for (double v : b.value.data) binio::write_f64(out, v);
  }
  if (!out) {
    throw std::runtime_error("failed writing checkpoint: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint: " + path.string());
  }
  binio::expect_magic(in, kCheckpointMagic, path.string());
  Checkpoint ckpt;
  ckpt.weights.config.d_in = binio::read_u64(in);
  ckpt.weights.config.d_embed = binio::read_u64(in);
  ckpt.weights.config.d_attn = binio::read_u64(in);
  ckpt.weights.config.n_bins = binio::read_u64(in);
  ckpt.weights.config.validate();
  ckpt.init_seed = binio::read_u64(in);
  const std::uint64_t n_blocks = binio::read_u64(in);
  for (std::uint64_t i = 0; i < n_blocks; ++i) {
    const std::uint64_t name_len = binio::read_u64(in);
    if (name_len > 256) {
      throw std::runtime_error("corrupt checkpoint block name");
    }
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rows = binio::read_u64(in);
    const std::uint64_t cols = binio::read_u64(in);
    linalg::Matrix m(rows, cols);
    for (double& v : m.data) v = binio::read_f64(in);
    if (!in) throw std::runtime_error("checkpoint truncated");
    ckpt.weights.params.blocks.push_back({std::move(name), std::move(m)});
  }
  BlockSet expected = make_weight_blocks(ckpt.weights.config);
  if (!ckpt.weights.params.same_structure(expected)) {
    throw std::runtime_error("checkpoint blocks do not match its NetConfig");
  }
  return ckpt;
}

}  // namespace tvmerge::nn
