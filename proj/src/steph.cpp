#include "tvmerge/steph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tvmerge/rng.hpp"
#include "tvmerge/survival.hpp"

namespace tvmerge::steph {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sum_exp(std::span<const double> v) {
  double vmax = v[0];
  for (double x : v) vmax = std::max(vmax, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - vmax);
  return vmax + std::log(acc);
}

// Everything the head/encoder backward needs from one hypernet forward.
struct HyperCache {
  linalg::Matrix pre;             // n x d_hyper pre-activations
  std::vector<double> z;          // pooled encoder output
  std::vector<double> lam_logit;  // head pre-activations (hyper/param modes)
  std::vector<double> w_logit;
  HyperOutput out;
};

HyperCache hyper_forward_cached(const HyperNet& net,
                                const linalg::Matrix& x) {
  const HyperConfig& c = net.config;
  if (x.rows == 0) {
    throw std::invalid_argument("hypernet input bag is empty");
  }
  if (x.cols != c.d_in) {
    throw std::invalid_argument("hypernet input has " +
                                std::to_string(x.cols) +
                                " columns, expected " +
                                std::to_string(c.d_in));
  }
  const linalg::Matrix& E = net.params.at("enc.E");
  const linalg::Matrix& b = net.params.at("enc.b");

  const std::size_t n = x.rows;
  HyperCache f;
  f.pre = linalg::Matrix(n, c.d_hyper);
  f.z.assign(c.d_hyper, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &x.data[i * c.d_in];
    for (std::size_t r = 0; r < c.d_hyper; ++r) {
      double acc = b.data[r];
      const double* er = &E.data[r * c.d_in];
      for (std::size_t j = 0; j < c.d_in; ++j) acc += er[j] * xi[j];
      f.pre(i, r) = acc;
      if (acc > 0.0) f.z[r] += acc;
    }
  }
  for (double& v : f.z) v /= static_cast<double>(n);

  auto head = [&](HeadMode mode, const char* w_name, const char* b_name,
                  std::vector<double>& logits) {
    logits.assign(c.m, 0.0);
    if (mode == HeadMode::kFixed) return;
    const linalg::Matrix& hb = net.params.at(b_name);
    if (mode == HeadMode::kParam) {
      for (std::size_t i = 0; i < c.m; ++i) logits[i] = hb.data[i];
      return;
    }
    const linalg::Matrix& hw = net.params.at(w_name);
    for (std::size_t i = 0; i < c.m; ++i) {
      double acc = hb.data[i];
      const double* row = &hw.data[i * c.d_hyper];
      for (std::size_t r = 0; r < c.d_hyper; ++r) acc += row[r] * f.z[r];
      logits[i] = acc;
    }
  };
  head(c.lambda_mode, "lam.W", "lam.b", f.lam_logit);
  head(c.w_mode, "agg.W", "agg.b", f.w_logit);

  f.out.lambda.resize(c.m);
  f.out.w.resize(c.m);
  for (std::size_t i = 0; i < c.m; ++i) {
    f.out.lambda[i] = c.lambda_mode == HeadMode::kFixed
                          ? c.fixed_lambda
                          : sigmoid(f.lam_logit[i]);
    f.out.w[i] =
        c.w_mode == HeadMode::kFixed ? c.fixed_w : softplus(f.w_logit[i]);
  }
  return f;
}

// M_0 + sum_{j in sel} w_j * mixup(tau_t, tau_s_j, lambda_j), accumulated
// in selection order so it is bitwise-consistent with sparse_aggregate.
nn::ModelWeights assemble_selected(const FrozenModelSet& frozen,
                                   const HyperOutput& out,
                                   std::span<const std::size_t> sel) {
  taskvec::TaskVector star{frozen.tau_t.config,
                           nn::zeros_like(frozen.tau_t.blocks)};
  for (std::size_t j : sel) {
    taskvec::TaskVector mix =
        taskvec::mixup(frozen.tau_t, frozen.tau_sources[j], out.lambda[j]);
    nn::add_scaled(star.blocks, mix.blocks, out.w[j]);
  }
  return taskvec::apply(frozen.m_zero, star, 1.0);
}

void check_output_conforms(const FrozenModelSet& frozen,
                           const HyperOutput& out) {
  if (out.lambda.size() != frozen.tau_sources.size() ||
      out.w.size() != frozen.tau_sources.size()) {
    throw std::invalid_argument(
        "hypernet output size does not match the source count");
  }
}

}  // namespace

void HyperConfig::validate() const {
  if (d_in < 1 || d_hyper < 1 || m < 1) {
    throw std::domain_error("hypernet dimensions must be >= 1");
  }
  if (!(fixed_lambda >= 0.0 && fixed_lambda <= 1.0)) {
    throw std::domain_error("fixed_lambda must lie in [0, 1]");
  }
  if (!(fixed_w >= 0.0) || !std::isfinite(fixed_w)) {
    throw std::domain_error("fixed_w must be finite and >= 0");
  }
}

void MergeConfig::validate() const {
  if (m < 1) throw std::domain_error("merge needs at least one source");
  if (k < 1 || k > m) {
    throw std::domain_error("top-K must satisfy 1 <= k <= m (got k=" +
                            std::to_string(k) + ", m=" + std::to_string(m) +
                            ")");
  }
  if (beta < 0.0 || gamma < 0.0) {
    throw std::domain_error("loss coefficients must be >= 0");
  }
  if (d_hyper < 1) throw std::domain_error("d_hyper must be >= 1");
}

void FrozenModelSet::validate() const {
  if (tau_t.config != m_zero.config) {
    throw std::invalid_argument("target task vector config mismatch");
  }
  nn::require_same_structure(m_zero.params, tau_t.blocks, "frozen set");
  for (const taskvec::TaskVector& s : tau_sources) {
    if (s.config != m_zero.config) {
      throw std::invalid_argument("source task vector config mismatch");
    }
    nn::require_same_structure(m_zero.params, s.blocks, "frozen set");
  }
}

HyperNet init_hypernet(const HyperConfig& config, std::uint64_t seed) {
  config.validate();
  HyperNet net;
  net.config = config;
  net.params.blocks = {
      {"enc.E", linalg::Matrix(config.d_hyper, config.d_in)},
      {"enc.b", linalg::Matrix(config.d_hyper, 1)},
      {"lam.W", linalg::Matrix(config.m, config.d_hyper)},
      {"lam.b", linalg::Matrix(config.m, 1)},
      {"agg.W", linalg::Matrix(config.m, config.d_hyper)},
      {"agg.b", linalg::Matrix(config.m, 1)},
  };
  rng::Stream stream(rng::derive_seed(seed, "hyper-init"));
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(config.d_in));
  for (double& v : net.params.at("enc.E").data) {
    v = stream.uniform(-enc_bound, enc_bound);
  }
  const double head_bound =
      1.0 / std::sqrt(static_cast<double>(config.d_hyper));
  for (double& v : net.params.at("lam.W").data) {
    v = stream.uniform(-head_bound, head_bound);
  }
  for (double& v : net.params.at("agg.W").data) {
    v = stream.uniform(-head_bound, head_bound);
  }
  return net;
}

HyperOutput hyper_forward(const HyperNet& net,
                          const linalg::Matrix& instances) {
  return hyper_forward_cached(net, instances).out;
}

nn::ModelWeights assemble_target(const FrozenModelSet& frozen,
                                 const HyperOutput& out, std::size_t k) {
  frozen.validate();
  check_output_conforms(frozen, out);
  std::vector<taskvec::TaskVector> mixtures;
  mixtures.reserve(frozen.tau_sources.size());
  for (std::size_t i = 0; i < frozen.tau_sources.size(); ++i) {
    mixtures.push_back(
        taskvec::mixup(frozen.tau_t, frozen.tau_sources[i], out.lambda[i]));
  }
  taskvec::TaskVector star = taskvec::sparse_aggregate(mixtures, out.w, k);
  return taskvec::apply(frozen.m_zero, star, 1.0);
}

StephLossParts steph_loss(std::span<const double> hazard_logits,
                          const surv::SurvLabel& label, const HyperOutput& out,
                          std::size_t k, double beta, double gamma) {
  if (out.lambda.size() != out.w.size() || out.lambda.empty()) {
    throw std::invalid_argument("hypernet output sizes are inconsistent");
  }
  StephLossParts parts;
  parts.l_sl = surv::nll_loss(hazard_logits, label);
  double lam_sq = 0.0;
  for (std::size_t j : taskvec::topk_indices(out.w, k)) {
    lam_sq += out.lambda[j] * out.lambda[j];
  }
  parts.l_mix = lam_sq / static_cast<double>(k);
  const double lse = log_sum_exp(out.w);
  parts.l_agg = lse * lse;
  parts.total = parts.l_sl + beta * parts.l_mix + gamma * parts.l_agg;
  return parts;
}

StephLossParts steph_eval(const HyperNet& net, const FrozenModelSet& frozen,
                          const nn::Bag& bag, const MergeConfig& config,
                          const std::vector<std::size_t>* forced_topk) {
  config.validate();
  if (net.config.m != config.m ||
      frozen.tau_sources.size() != config.m) {
    throw std::invalid_argument("source count mismatch");
  }
  HyperOutput out = hyper_forward(net, bag.instances);
  std::vector<std::size_t> sel =
      forced_topk ? *forced_topk : taskvec::topk_indices(out.w, config.k);
  if (sel.size() != config.k) {
    throw std::invalid_argument("forced selection size must equal k");
  }
  nn::ModelWeights merged = assemble_selected(frozen, out, sel);
  nn::ForwardResult fr = nn::forward(merged, bag);

  StephLossParts parts;
  parts.l_sl = surv::nll_loss(fr.hazard_logits, bag.label);
  double lam_sq = 0.0;
  for (std::size_t j : sel) lam_sq += out.lambda[j] * out.lambda[j];
  parts.l_mix = lam_sq / static_cast<double>(config.k);
  const double lse = log_sum_exp(out.w);
  parts.l_agg = lse * lse;
  parts.total =
      parts.l_sl + config.beta * parts.l_mix + config.gamma * parts.l_agg;
  return parts;
}

StephBackwardResult steph_backward(const HyperNet& net,
                                   const FrozenModelSet& frozen,
                                   const nn::Bag& bag,
                                   const MergeConfig& config) {
  config.validate();
  const HyperConfig& hc = net.config;
  if (hc.m != config.m || frozen.tau_sources.size() != config.m) {
    throw std::invalid_argument("source count mismatch");
  }

  HyperCache cache = hyper_forward_cached(net, bag.instances);
  const HyperOutput& out = cache.out;
  std::vector<std::size_t> sel = taskvec::topk_indices(out.w, config.k);
  nn::ModelWeights merged = assemble_selected(frozen, out, sel);

  nn::BackwardResult base =
      nn::backward(merged, bag, [&bag](std::span<const double> logits) {
        return surv::nll_loss_grad(logits, bag.label);
      });

  StephBackwardResult result;
  result.out = out;
  result.topk = sel;
  result.grads = nn::zeros_like(net.params);

  // Survival term through the assembled weights, selection held constant:
  // dL/dlambda_j = w_j <G, tau_t - tau_s_j>, dL/dw_j = <G, tau_mix_j>.
  std::vector<double> dlam(hc.m, 0.0);
  std::vector<double> dw(hc.m, 0.0);
  const double g_t = nn::dot(base.grads, frozen.tau_t.blocks);
  double lam_sq = 0.0;
  for (std::size_t j : sel) {
    const double g_s = nn::dot(base.grads, frozen.tau_sources[j].blocks);
    dlam[j] = out.w[j] * (g_t - g_s);
    dw[j] = out.lambda[j] * g_t + (1.0 - out.lambda[j]) * g_s;
    // L_mix only covers the selected mixtures.
    dlam[j] += config.beta * 2.0 * out.lambda[j] / static_cast<double>(config.k);
    lam_sq += out.lambda[j] * out.lambda[j];
  }

  // L_agg = (log sum_i exp(w_i))^2 over every source.
  const double lse = log_sum_exp(out.w);
  for (std::size_t i = 0; i < hc.m; ++i) {
    dw[i] += config.gamma * 2.0 * lse * std::exp(out.w[i] - lse);
  }

  result.loss.l_sl = base.loss;
  result.loss.l_mix = lam_sq / static_cast<double>(config.k);
  result.loss.l_agg = lse * lse;
  result.loss.total = result.loss.l_sl + config.beta * result.loss.l_mix +
                      config.gamma * result.loss.l_agg;
  if (!std::isfinite(result.loss.total)) {
    throw std::runtime_error("non-finite merge loss");
  }

  // Through the output activations into the heads and shared encoder.
  std::vector<double> dz(hc.d_hyper, 0.0);
  auto head_backward = [&](HeadMode mode, std::span<const double> dout,
                           std::span<const double> dact, const char* w_name,
                           const char* b_name) {
    if (mode == HeadMode::kFixed) return;
    linalg::Matrix& db = result.grads.at(b_name);
    for (std::size_t i = 0; i < hc.m; ++i) {
      db.data[i] += dout[i] * dact[i];
    }
    if (mode == HeadMode::kParam) return;
    const linalg::Matrix& W = net.params.at(w_name);
    linalg::Matrix& dW = result.grads.at(w_name);
    for (std::size_t i = 0; i < hc.m; ++i) {
      const double d = dout[i] * dact[i];
      if (d == 0.0) continue;
      const double* wrow = &W.data[i * hc.d_hyper];
      double* drow = &dW.data[i * hc.d_hyper];
      for (std::size_t r = 0; r < hc.d_hyper; ++r) {
        drow[r] += d * cache.z[r];
        dz[r] += d * wrow[r];
      }
    }
  };

  std::vector<double> dact_lambda(hc.m, 0.0);
  std::vector<double> dact_w(hc.m, 0.0);
  for (std::size_t i = 0; i < hc.m; ++i) {
    dact_lambda[i] = out.lambda[i] * (1.0 - out.lambda[i]);  // sigmoid'
    dact_w[i] = sigmoid(cache.w_logit[i]);                   // softplus'
  }
  head_backward(hc.lambda_mode, dlam, dact_lambda, "lam.W", "lam.b");
  head_backward(hc.w_mode, dw, dact_w, "agg.W", "agg.b");

  bool encoder_used = hc.lambda_mode == HeadMode::kHyper ||
                      hc.w_mode == HeadMode::kHyper;
  if (encoder_used) {
    const linalg::Matrix& x = bag.instances;
    linalg::Matrix& dE = result.grads.at("enc.E");
    linalg::Matrix& db = result.grads.at("enc.b");
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* xi = &x.data[i * hc.d_in];
      for (std::size_t r = 0; r < hc.d_hyper; ++r) {
        if (cache.pre(i, r) <= 0.0) continue;
        const double d = dz[r] * inv_n;
        if (d == 0.0) continue;
        db.data[r] += d;
        double* erow = &dE.data[r * hc.d_in];
        for (std::size_t j = 0; j < hc.d_in; ++j) erow[j] += d * xi[j];
      }
    }
  }
  return result;
}

StephTrainResult train_steph(std::span<const nn::Bag> train_data,
                             const FrozenModelSet& frozen,
                             const MergeConfig& merge_config,
                             const nn::TrainConfig& train_config,
                             const HyperNet* initial) {
  merge_config.validate();
  frozen.validate();
  if (frozen.tau_sources.size() != merge_config.m) {
    throw std::invalid_argument("frozen set has " +
                                std::to_string(frozen.tau_sources.size()) +
                                " sources, merge config expects " +
                                std::to_string(merge_config.m));
  }

  StephTrainResult result;
  if (initial) {
    result.net = *initial;
    if (result.net.config.m != merge_config.m) {
      throw std::invalid_argument("initial hypernet source count mismatch");
    }
    if (result.net.config.d_in != frozen.m_zero.config.d_in) {
      throw std::invalid_argument("initial hypernet input width mismatch");
    }
  } else {
    HyperConfig hc;
    hc.d_in = frozen.m_zero.config.d_in;
    hc.d_hyper = merge_config.d_hyper;
    hc.m = merge_config.m;
    result.net = init_hypernet(hc, train_config.seed);
  }

  if (train_config.epochs == 0) return result;
  if (train_data.empty()) {
    throw std::invalid_argument("hypernet training data is empty");
  }

  const std::size_t n = train_data.size();
  const std::size_t steps_per_epoch =
      (n + train_config.accumulation_bags - 1) / train_config.accumulation_bags;
  nn::LrSchedule schedule{train_config.learning_rate,
                          train_config.warmup_epochs * steps_per_epoch,
                          train_config.epochs * steps_per_epoch};

  nn::AdamWState state = nn::make_adamw_state(result.net.params);
  rng::Stream shuffle_stream(rng::derive_seed(train_config.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const std::size_t m = merge_config.m;
  nn::BlockSet accum = nn::zeros_like(result.net.params);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    shuffle_stream.shuffle(order);
    double epoch_loss = 0.0;
    TrajectoryPoint point;
    point.epoch = epoch;
    point.mean_lambda.assign(m, 0.0);
    point.mean_w.assign(m, 0.0);
    std::size_t pending = 0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const nn::Bag& bag = train_data[order[pos]];
      StephBackwardResult bw =
          steph_backward(result.net, frozen, bag, merge_config);
      epoch_loss += bw.loss.total;
      for (std::size_t i = 0; i < m; ++i) {
        point.mean_lambda[i] += bw.out.lambda[i];
        point.mean_w[i] += bw.out.w[i];
      }
      nn::add_scaled(accum, bw.grads, 1.0);
      ++pending;
      if (pending == train_config.accumulation_bags || pos + 1 == n) {
        nn::scale_inplace(accum, 1.0 / static_cast<double>(pending));
        nn::adamw_step(result.net.params, state, accum, ++step, schedule,
                       train_config.weight_decay);
        accum = nn::zeros_like(result.net.params);
        pending = 0;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      point.mean_lambda[i] /= static_cast<double>(n);
      point.mean_w[i] /= static_cast<double>(n);
    }
    result.log.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
    result.log.trajectory.push_back(std::move(point));
  }
  return result;
}

Prediction predict(const HyperNet& net, const FrozenModelSet& frozen,
                   const nn::Bag& bag, std::size_t k) {
  HyperOutput out = hyper_forward(net, bag.instances);
  nn::ModelWeights merged = assemble_target(frozen, out, k);
  nn::ForwardResult fr = nn::forward(merged, bag);
  return {std::move(fr.hazard_logits), std::move(out)};
}

std::string trajectory_tsv(const StephTrainLog& log) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch\tsource_id\tmean_lambda\tmean_w\n";
  for (const TrajectoryPoint& p : log.trajectory) {
    for (std::size_t i = 0; i < p.mean_lambda.size(); ++i) {
      out << p.epoch << '\t' << i << '\t' << p.mean_lambda[i] << '\t'
          << p.mean_w[i] << '\n';
    }
  }
  return out.str();
}

}  // namespace tvmerge::steph
