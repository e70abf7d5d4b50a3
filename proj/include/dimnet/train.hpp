#pragma once

// Mixed-modality minibatch training: SGD with momentum, weight decay inside
// the velocity update, and a piecewise-constant step learning-rate schedule.
// Branch updates are disjoint: a branch that received no samples in the
// current batch is left completely untouched (no decay, no velocity decay),
// so training with modality_mix = 1.0 leaves the B branch bit-identical to
// its initialization. Heads are updated every step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dimnet/eval.hpp"
#include "dimnet/forward.hpp"
#include "dimnet/net.hpp"
#include "dimnet/rng.hpp"

namespace dimnet {

struct LrDrop {
  std::uint64_t iteration = 0;
  double divisor = 1.0;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  double modality_mix = 0.5;          // fraction of A-samples per batch
  std::vector<double> lambda;         // per covariate, schema order
  double lr_initial = 0.1;
  std::vector<LrDrop> lr_drops;       // sorted by iteration
  std::uint64_t total_iters = 1000;
  double momentum = 0.9;
  double weight_decay = 0.001;
  std::uint64_t seed = 0;
  std::uint64_t val_cadence = 200;    // history interval; 0 disables

  void validate(std::size_t n_covariates) const {
    if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
    if (modality_mix < 0.0 || modality_mix > 1.0)
      throw std::invalid_argument("config: modality_mix outside [0,1]");
    if (lambda.size() != n_covariates)
      throw std::invalid_argument("config: lambda length must match schema");
    for (std::size_t i = 1; i < lr_drops.size(); ++i)
      if (lr_drops[i].iteration < lr_drops[i - 1].iteration)
        throw std::invalid_argument("config: lr_drops must be sorted by iteration");
  }
};

struct OptState {
  ParamStore velocity;        // zero-shaped like the params; running stats unused
  std::uint64_t iteration = 0;

  static OptState for_params(const ParamStore& params) {
    return {zeros_like(params), 0};
  }
};

// lr(iter) = lr_initial / product of divisors whose iteration <= iter.
inline double learning_rate_at(const TrainConfig& config, std::uint64_t iter) {
  double lr = config.lr_initial;
  for (const auto& drop : config.lr_drops)
    if (drop.iteration <= iter) lr /= drop.divisor;
  return lr;
}

// Uniform with-replacement draw: round(batch_size * modality_mix) A-samples
// followed by the B-samples. No epoch bookkeeping.
inline std::vector<const Sample*> make_minibatch(const Dataset& train, const TrainConfig& config,
                                                 Rng& rng) {
  std::vector<std::size_t> pool_a, pool_b;
  for (std::size_t i = 0; i < train.samples.size(); ++i)
    (train.samples[i].modality == Modality::A ? pool_a : pool_b).push_back(i);
  const auto n_a = static_cast<std::size_t>(
      std::llround(static_cast<double>(config.batch_size) * config.modality_mix));
  const std::size_t n_b = config.batch_size - n_a;
  if (n_a > 0 && pool_a.empty())
    throw std::invalid_argument("make_minibatch: no A-samples available");
  if (n_b > 0 && pool_b.empty())
    throw std::invalid_argument("make_minibatch: no B-samples available");
  std::vector<const Sample*> batch;
  batch.reserve(config.batch_size);
  for (std::size_t i = 0; i < n_a; ++i)
    batch.push_back(&train.samples[pool_a[rng.below(pool_a.size())]]);
  for (std::size_t i = 0; i < n_b; ++i)
    batch.push_back(&train.samples[pool_b[rng.below(pool_b.size())]]);
  return batch;
}

namespace detail {

inline void sgd_update_tensor(Tensor& param, const Tensor& grad, Tensor& velocity,
                              const TrainConfig& config, double lr, const char* what) {
  for (std::size_t i = 0; i < param.numel(); ++i) {
    if (!std::isfinite(grad[i]))
      throw numeric_error(std::string("sgd_step: non-finite gradient in ") + what);
    velocity[i] = config.momentum * velocity[i] + grad[i] + config.weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

inline void sgd_update_layer(LayerParams& p, const LayerParams& g, LayerParams& v,
                             const TrainConfig& config, double lr, const char* what) {
  if (!p.weight.empty()) sgd_update_tensor(p.weight, g.weight, v.weight, config, lr, what);
  if (!p.bias.empty()) sgd_update_tensor(p.bias, g.bias, v.bias, config, lr, what);
  if (!p.gamma.empty()) sgd_update_tensor(p.gamma, g.gamma, v.gamma, config, lr, what);
  if (!p.beta.empty()) sgd_update_tensor(p.beta, g.beta, v.beta, config, lr, what);
  // running stats are BN state, not decayed or velocity-tracked
}

}  // namespace detail

// One optimizer step. active_a / active_b say which branches saw samples; an
// inactive branch is skipped entirely.
inline void sgd_step(ParamStore& params, const ParamStore& grads, OptState& opt,
                     const TrainConfig& config, bool active_a = true, bool active_b = true) {
  const double lr = learning_rate_at(config, opt.iteration);
  if (active_a)
    for (std::size_t i = 0; i < params.branch_a.size(); ++i)
      detail::sgd_update_layer(params.branch_a[i], grads.branch_a[i], opt.velocity.branch_a[i],
                               config, lr, "branch A");
  if (active_b)
    for (std::size_t i = 0; i < params.branch_b.size(); ++i)
      detail::sgd_update_layer(params.branch_b[i], grads.branch_b[i], opt.velocity.branch_b[i],
                               config, lr, "branch B");
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    detail::sgd_update_tensor(params.heads[i].weight, grads.heads[i].weight,
                              opt.velocity.heads[i].weight, config, lr, "head");
    detail::sgd_update_tensor(params.heads[i].bias, grads.heads[i].bias,
                              opt.velocity.heads[i].bias, config, lr, "head");
  }
  ++opt.iteration;
}

struct HistoryRow {
  std::uint64_t iter = 0;
  double loss_total = 0.0;
  std::vector<double> loss_per_covariate;
  std::vector<double> val_acc_a;  // per covariate
  std::vector<double> val_acc_b;
};

struct TrainResult {
  ParamStore params;
  std::vector<HistoryRow> history;
};

inline TrainResult train(const NetworkSpec& spec, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& config) {
  spec.validate();
  config.validate(spec.schema.size());
  if (!(train_set.schema == spec.schema))
    throw std::invalid_argument("train: dataset schema does not match network spec");
  if (!(train_set.shapes == spec.input_shapes))
    throw std::invalid_argument("train: dataset shapes do not match network spec");

  TrainResult result;
  result.params = init_params(spec, derive_seed(config.seed, 0x1217));
  OptState opt = OptState::for_params(result.params);
  Rng batch_rng(derive_seed(config.seed, 0xBA7C));

  for (std::uint64_t t = 0; t < config.total_iters; ++t) {
    const auto batch = make_minibatch(train_set, config, batch_rng);
    const ForwardBatch fwd = forward_batch(spec, result.params, batch, Mode::train);
    const LossBreakdown loss =
        loss_from_embeddings(spec, result.params, batch, config.lambda, fwd.embeddings);
    if (!std::isfinite(loss.total))
      throw numeric_error("train: loss diverged at iteration " + std::to_string(t));
    const ParamStore grads = backward(spec, result.params, batch, config.lambda, fwd);
    commit_bn_updates(result.params, fwd);
    bool active_a = false, active_b = false;
    for (const Sample* s : batch) (s->modality == Modality::A ? active_a : active_b) = true;
    try {
      sgd_step(result.params, grads, opt, config, active_a, active_b);
    } catch (const numeric_error& e) {
      throw numeric_error(std::string(e.what()) + " at iteration " + std::to_string(t));
    }

    if (config.val_cadence > 0 && (t + 1) % config.val_cadence == 0) {
      HistoryRow row;
      row.iter = t + 1;
      row.loss_total = loss.total;
      row.loss_per_covariate = loss.per_covariate;
      row.val_acc_a.resize(spec.schema.size());
      row.val_acc_b.resize(spec.schema.size());
      for (std::size_t c = 0; c < spec.schema.size(); ++c) {
        const CovariateAccuracy acc = covariate_accuracy(spec, result.params, val_set, c);
        row.val_acc_a[c] = acc.acc_a;
        row.val_acc_b[c] = acc.acc_b;
      }
      result.history.push_back(std::move(row));
    }
  }
  return result;
}

// History CSV: iter,loss_total,loss_<cov>...,val_acc_<cov>_A,val_acc_<cov>_B...
inline std::string history_csv(const CovariateSchema& schema,
                               const std::vector<HistoryRow>& history) {
  std::string out = "iter,loss_total";
  for (const auto& c : schema.covariates) out += ",loss_" + c.name;
  for (const auto& c : schema.covariates)
    out += ",val_acc_" + c.name + "_A,val_acc_" + c.name + "_B";
  out += '\n';
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += ',';
    out += buf;
  };
  for (const auto& row : history) {
    out += std::to_string(row.iter);
    put(row.loss_total);
    for (double v : row.loss_per_covariate) put(v);
    for (std::size_t c = 0; c < schema.size(); ++c) {
      put(row.val_acc_a[c]);
      put(row.val_acc_b[c]);
    }
    out += '\n';
  }
  return out;
}

// --- key=value config files ----------------------------------------------

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Plain-text config: one key=value per line, '#' comments, blank lines ok.
inline std::map<std::string, std::string> parse_key_value_file(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error("config line without '=': " + line);
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

// lambda syntax: a single number for all covariates, or name:value pairs
// ("identity:1,gender:1"); unnamed covariates get 0.
inline std::vector<double> parse_lambda(const std::string& text, const CovariateSchema& schema) {
  std::vector<double> lambda(schema.size(), 0.0);
  if (text.find(':') == std::string::npos) {
    const double v = std::stod(text);
    std::fill(lambda.begin(), lambda.end(), v);
    return lambda;
  }
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw config_error("bad lambda entry '" + item + "'");
    const std::string name = item.substr(0, colon);
    const int idx = schema.index_of(name);
    if (idx < 0) throw config_error("lambda names unknown covariate '" + name + "'");
    lambda[static_cast<std::size_t>(idx)] = std::stod(item.substr(colon + 1));
  }
  return lambda;
}

// lr_drops syntax: "iter:divisor,iter:divisor", e.g. "16000:10,24000:10".
inline std::vector<LrDrop> parse_lr_drops(const std::string& text) {
  std::vector<LrDrop> drops;
  if (text.empty() || text == "none") return drops;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw config_error("bad lr_drops entry '" + item + "'");
    drops.push_back({std::stoull(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
  }
  return drops;
}

inline TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv,
                                         const CovariateSchema& schema) {
  TrainConfig config;
  config.lambda.assign(schema.size(), 1.0);
  auto get = [&](const char* key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  try {
    if (const auto* v = get("batch_size")) config.batch_size = std::stoul(*v);
    if (const auto* v = get("modality_mix")) config.modality_mix = std::stod(*v);
    if (const auto* v = get("lambda")) config.lambda = parse_lambda(*v, schema);
    if (const auto* v = get("lr_initial")) config.lr_initial = std::stod(*v);
    if (const auto* v = get("lr_drops")) config.lr_drops = parse_lr_drops(*v);
    if (const auto* v = get("total_iters")) config.total_iters = std::stoull(*v);
    if (const auto* v = get("momentum")) config.momentum = std::stod(*v);
    if (const auto* v = get("weight_decay")) config.weight_decay = std::stod(*v);
    if (const auto* v = get("seed")) config.seed = std::stoull(*v);
    if (const auto* v = get("val_cadence")) config.val_cadence = std::stoull(*v);
  } catch (const std::invalid_argument&) {
    throw config_error("malformed numeric value in train config");
  }
  static const char* known[] = {"batch_size", "modality_mix", "lambda",       "lr_initial",
                                "lr_drops",   "total_iters",  "momentum",     "weight_decay",
                                "seed",       "val_cadence"};
  for (const auto& [key, value] : kv) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw config_error("unknown train config key '" + key + "'");
  }
  return config;
}

}  // namespace dimnet
