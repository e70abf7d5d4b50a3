#pragma once

// Forward and backward passes. Gradients are hand-derived per layer kind and
// checked against central finite differences (grad_check below).
//
// Batch semantics: samples are grouped by modality and each branch processes
// its own sub-batch; batchnorm statistics never mix modalities. In train
// mode BN uses sub-batch statistics unless the sub-batch has a single
// sample, in which case it falls back to running statistics. Proposed
// running-stat updates (momentum 0.9) are returned in the cache and
// committed by the caller, keeping the pass itself pure.
//
// Loss reduction: each covariate term is the mean cross-entropy over the
// A sub-batch plus the mean over the B sub-batch, weighted by lambda. With
// per-modality means, the head gradient of a mixed batch equals the sum of
// the two single-modality sub-batch gradients exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dimnet/net.hpp"

namespace dimnet {

enum class Mode : std::uint8_t { train, infer };

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;

struct BnCache {
  bool used_batch_stats = false;
  std::vector<double> mean, inv_std;
  std::vector<Tensor> xhat;
  std::vector<double> new_running_mean, new_running_var;
};

struct LayerCache {
  std::vector<Tensor> inputs;
  BnCache bn;
};

struct BranchCache {
  std::vector<std::size_t> batch_positions;
  std::vector<LayerCache> layers;
};

struct ForwardBatch {
  Mode mode = Mode::train;
  std::vector<Tensor> embeddings;  // batch order
  BranchCache cache_a, cache_b;
};

namespace ops {

inline Tensor dense_forward(const LayerParams& p, const Tensor& x) {
  const std::size_t in = x.numel();
  const std::size_t out = p.bias.numel();
  if (p.weight.shape[1] != in)
    throw std::invalid_argument("dense: input size " + std::to_string(in) + " does not match weight");
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double acc = p.bias[o];
    const double* w = &p.weight.data[o * in];
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline void dense_backward(const LayerParams& p, const Tensor& x, const Tensor& gy,
                           LayerParams& grad, Tensor& gx) {
  const std::size_t in = x.numel();
  const std::size_t out = gy.numel();
  gx = Tensor(x.shape);
  for (std::size_t o = 0; o < out; ++o) {
    const double g = gy[o];
    grad.bias[o] += g;
    double* gw = &grad.weight.data[o * in];
    const double* w = &p.weight.data[o * in];
    for (std::size_t i = 0; i < in; ++i) {
      gw[i] += g * x[i];
      gx[i] += g * w[i];
    }
  }
}

inline Tensor conv1d_forward(const LayerSpec& l, const LayerParams& p, const Tensor& x) {
  const std::size_t T = x.shape[0], C = x.shape[1];
  const std::size_t T2 = conv_out_dim(T, l.filter_size, l.stride, l.padding, "conv1d");
  const std::size_t F = l.filters;
  Tensor y({T2, F});
  for (std::size_t t2 = 0; t2 < T2; ++t2) {
    double* out = &y.data[t2 * F];
    for (std::size_t f = 0; f < F; ++f) out[f] = p.bias[f];
    for (std::size_t k = 0; k < l.filter_size; ++k) {
      const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(t2 * l.stride + k) -
                               static_cast<std::ptrdiff_t>(l.padding);
      if (t < 0 || t >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xin = &x.data[static_cast<std::size_t>(t) * C];
      for (std::size_t ci = 0; ci < C; ++ci) {
        const double xv = xin[ci];
        const double* w = &p.weight.data[(k * C + ci) * F];
        for (std::size_t f = 0; f < F; ++f) out[f] += xv * w[f];
      }
    }
  }
  return y;
}

inline void conv1d_backward(const LayerSpec& l, const LayerParams& p, const Tensor& x,
                            const Tensor& gy, LayerParams& grad, Tensor& gx) {
  const std::size_t T = x.shape[0], C = x.shape[1];
  const std::size_t T2 = gy.shape[0], F = l.filters;
  gx = Tensor(x.shape);
  for (std::size_t t2 = 0; t2 < T2; ++t2) {
    const double* g = &gy.data[t2 * F];
    for (std::size_t f = 0; f < F; ++f) grad.bias[f] += g[f];
    for (std::size_t k = 0; k < l.filter_size; ++k) {
      const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(t2 * l.stride + k) -
                               static_cast<std::ptrdiff_t>(l.padding);
      if (t < 0 || t >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xin = &x.data[static_cast<std::size_t>(t) * C];
      double* gxin = &gx.data[static_cast<std::size_t>(t) * C];
      for (std::size_t ci = 0; ci < C; ++ci) {
        const double xv = xin[ci];
        const double* w = &p.weight.data[(k * C + ci) * F];
        double* gw = &grad.weight.data[(k * C + ci) * F];
        double acc = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          gw[f] += xv * g[f];
          acc += w[f] * g[f];
        }
        gxin[ci] += acc;
      }
    }
  }
}

inline Tensor conv2d_forward(const LayerSpec& l, const LayerParams& p, const Tensor& x) {
  const std::size_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
  const std::size_t K = l.filter_size, F = l.filters;
  const std::size_t H2 = conv_out_dim(H, K, l.stride, l.padding, "conv2d");
  const std::size_t W2 = conv_out_dim(W, K, l.stride, l.padding, "conv2d");
  Tensor y({H2, W2, F});
  for (std::size_t h2 = 0; h2 < H2; ++h2)
    for (std::size_t w2 = 0; w2 < W2; ++w2) {
      double* out = &y.data[(h2 * W2 + w2) * F];
      for (std::size_t f = 0; f < F; ++f) out[f] = p.bias[f];
      for (std::size_t kh = 0; kh < K; ++kh) {
        const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(h2 * l.stride + kh) -
                                 static_cast<std::ptrdiff_t>(l.padding);
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kw = 0; kw < K; ++kw) {
          const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(w2 * l.stride + kw) -
                                   static_cast<std::ptrdiff_t>(l.padding);
          if (w < 0 || w >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* xin = &x.data[(static_cast<std::size_t>(h) * W + static_cast<std::size_t>(w)) * C];
          for (std::size_t ci = 0; ci < C; ++ci) {
            const double xv = xin[ci];
            const double* wp = &p.weight.data[((kh * K + kw) * C + ci) * F];
            for (std::size_t f = 0; f < F; ++f) out[f] += xv * wp[f];
          }
        }
      }
    }
  return y;
}

inline void conv2d_backward(const LayerSpec& l, const LayerParams& p, const Tensor& x,
                            const Tensor& gy, LayerParams& grad, Tensor& gx) {
  const std::size_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
  const std::size_t K = l.filter_size, F = l.filters;
  const std::size_t H2 = gy.shape[0], W2 = gy.shape[1];
  gx = Tensor(x.shape);
  for (std::size_t h2 = 0; h2 < H2; ++h2)
    for (std::size_t w2 = 0; w2 < W2; ++w2) {
      const double* g = &gy.data[(h2 * W2 + w2) * F];
      for (std::size_t f = 0; f < F; ++f) grad.bias[f] += g[f];
      for (std::size_t kh = 0; kh < K; ++kh) {
        const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(h2 * l.stride + kh) -
                                 static_cast<std::ptrdiff_t>(l.padding);
        if (h < 0 || h >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kw = 0; kw < K; ++kw) {
          const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(w2 * l.stride + kw) -
                                   static_cast<std::ptrdiff_t>(l.padding);
          if (w < 0 || w >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t xoff =
              (static_cast<std::size_t>(h) * W + static_cast<std::size_t>(w)) * C;
          const double* xin = &x.data[xoff];
          double* gxin = &gx.data[xoff];
          for (std::size_t ci = 0; ci < C; ++ci) {
            const double xv = xin[ci];
            const double* wp = &p.weight.data[((kh * K + kw) * C + ci) * F];
            double* gw = &grad.weight.data[((kh * K + kw) * C + ci) * F];
            double acc = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
              gw[f] += xv * g[f];
              acc += wp[f] * g[f];
            }
            gxin[ci] += acc;
          }
        }
      }
    }
}

}  // namespace ops

// Forward one modality sub-batch through its branch.
inline std::vector<Tensor> branch_forward(const NetworkSpec& spec, Modality modality,
                                          const std::vector<LayerParams>& layer_params,
                                          std::vector<Tensor> current, Mode mode,
                                          BranchCache* cache) {
  const auto& layers = spec.branch(modality);
  const std::size_t n = current.size();
  if (cache) cache->layers.resize(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& l = layers[li];
    const LayerParams& p = layer_params[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    const bool need_inputs =
        lc && (l.kind == LayerKind::dense || l.kind == LayerKind::conv1d ||
               l.kind == LayerKind::conv2d || l.kind == LayerKind::relu ||
               l.kind == LayerKind::global_avg_pool);
    if (need_inputs) lc->inputs = current;
    switch (l.kind) {
      case LayerKind::dense:
        for (auto& t : current) t = ops::dense_forward(p, t);
        break;
      case LayerKind::conv1d:
        for (auto& t : current) t = ops::conv1d_forward(l, p, t);
        break;
      case LayerKind::conv2d:
        for (auto& t : current) t = ops::conv2d_forward(l, p, t);
        break;
      case LayerKind::relu:
        for (auto& t : current)
          for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::global_avg_pool:
        for (auto& t : current) {
          const std::size_t channels = t.shape.back();
          const std::size_t spatial = t.numel() / channels;
          Tensor out({channels});
          for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) out[c] += t.data[s * channels + c];
          for (std::size_t c = 0; c < channels; ++c) out[c] /= static_cast<double>(spatial);
          t = std::move(out);
        }
        break;
      case LayerKind::batchnorm: {
        const std::size_t channels = current[0].shape.back();
        const std::size_t spatial = current[0].numel() / channels;
        BnCache bn;
        bn.used_batch_stats = (mode == Mode::train && n >= 2);
        bn.inv_std.resize(channels);
        if (bn.used_batch_stats) {
          bn.mean.assign(channels, 0.0);
          std::vector<double> var(channels, 0.0);
          const double count = static_cast<double>(n * spatial);
          for (const auto& t : current)
            for (std::size_t s = 0; s < spatial; ++s)
              for (std::size_t c = 0; c < channels; ++c) bn.mean[c] += t.data[s * channels + c];
          for (std::size_t c = 0; c < channels; ++c) bn.mean[c] /= count;
          for (const auto& t : current)
            for (std::size_t s = 0; s < spatial; ++s)
              for (std::size_t c = 0; c < channels; ++c) {
                const double d = t.data[s * channels + c] - bn.mean[c];
                var[c] += d * d;
              }
          for (std::size_t c = 0; c < channels; ++c) {
            var[c] /= count;
            bn.inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEpsilon);
          }
          bn.new_running_mean.resize(channels);
          bn.new_running_var.resize(channels);
          for (std::size_t c = 0; c < channels; ++c) {
            bn.new_running_mean[c] =
                kBnMomentum * p.running_mean[c] + (1.0 - kBnMomentum) * bn.mean[c];
            bn.new_running_var[c] =
                kBnMomentum * p.running_var[c] + (1.0 - kBnMomentum) * var[c];
          }
        } else {
          bn.mean.resize(channels);
          for (std::size_t c = 0; c < channels; ++c) {
            bn.mean[c] = p.running_mean[c];
            bn.inv_std[c] = 1.0 / std::sqrt(p.running_var[c] + kBnEpsilon);
          }
        }
        bn.xhat.reserve(n);
        for (auto& t : current) {
          Tensor xh(t.shape);
          for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t i = s * channels + c;
              xh.data[i] = (t.data[i] - bn.mean[c]) * bn.inv_std[c];
              t.data[i] = p.gamma[c] * xh.data[i] + p.beta[c];
            }
          bn.xhat.push_back(std::move(xh));
        }
        if (lc) lc->bn = std::move(bn);
        break;
      }
    }
  }
  return current;
}

inline ForwardBatch forward_batch(const NetworkSpec& spec, const ParamStore& params,
                                  std::span<const Sample* const> batch, Mode mode) {
  ForwardBatch result;
  result.mode = mode;
  result.embeddings.resize(batch.size());
  for (Modality m : {Modality::A, Modality::B}) {
    BranchCache& cache = m == Modality::A ? result.cache_a : result.cache_b;
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i]->modality != m) continue;
      if (batch[i]->features.shape != spec.input_shapes.of(m))
        throw std::invalid_argument(std::string("forward: sample shape ") +
                                    shape_string(batch[i]->features.shape) +
                                    " does not match branch " + modality_char(m) + " input " +
                                    shape_string(spec.input_shapes.of(m)));
      cache.batch_positions.push_back(i);
      inputs.push_back(batch[i]->features);
    }
    if (inputs.empty()) continue;
    auto outputs = branch_forward(spec, m, params.branch(m), std::move(inputs), mode, &cache);
    for (std::size_t j = 0; j < outputs.size(); ++j) {
      for (double v : outputs[j].data)
        if (!std::isfinite(v)) throw numeric_error("forward: non-finite embedding");
      result.embeddings[cache.batch_positions[j]] = std::move(outputs[j]);
    }
  }
  return result;
}

// Single-sample embedding (train mode on one sample uses the BN running-stat
// fallback; infer mode always uses running stats).
inline Tensor forward_embed(const NetworkSpec& spec, const ParamStore& params, const Sample& sample,
                            Mode mode = Mode::infer) {
  const Sample* one[1] = {&sample};
  return forward_batch(spec, params, one, mode).embeddings[0];
}

// Commit BN running-stat updates proposed by a train-mode forward pass.
inline void commit_bn_updates(ParamStore& params, const ForwardBatch& fwd) {
  for (Modality m : {Modality::A, Modality::B}) {
    const BranchCache& cache = m == Modality::A ? fwd.cache_a : fwd.cache_b;
    if (cache.batch_positions.empty()) continue;
    auto& layers = params.branch(m);
    for (std::size_t li = 0; li < cache.layers.size(); ++li) {
      const BnCache& bn = cache.layers[li].bn;
      if (!bn.used_batch_stats || bn.new_running_mean.empty()) continue;
      for (std::size_t c = 0; c < bn.new_running_mean.size(); ++c) {
        layers[li].running_mean[c] = bn.new_running_mean[c];
        layers[li].running_var[c] = bn.new_running_var[c];
      }
    }
  }
}

// Modality-agnostic covariate classifier: logits = W e + b.
inline Tensor classify(const ParamStore& params, const Tensor& embedding,
                       std::size_t covariate_index) {
  if (covariate_index >= params.heads.size())
    throw std::invalid_argument("classify: covariate index out of range");
  const HeadParams& head = params.heads[covariate_index];
  const std::size_t card = head.bias.numel();
  const std::size_t d = embedding.numel();
  if (head.weight.shape[1] != d) throw std::invalid_argument("classify: embedding size mismatch");
  Tensor logits({card});
  for (std::size_t k = 0; k < card; ++k) {
    double acc = head.bias[k];
    const double* w = &head.weight.data[k * d];
    for (std::size_t i = 0; i < d; ++i) acc += w[i] * embedding[i];
    logits[k] = acc;
  }
  return logits;
}

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad_logits;  // softmax - one_hot(label); sums to 0
};

inline CrossEntropy cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  double maxv = logits[0];
  for (double v : logits) maxv = std::max(maxv, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - maxv);
  const double lse = maxv + std::log(sum);
  CrossEntropy out;
  out.loss = lse - logits[static_cast<std::size_t>(label)];
  out.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.grad_logits[i] = std::exp(logits[i] - lse) - (static_cast<int>(i) == label ? 1.0 : 0.0);
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_covariate;  // lambda-weighted terms; sums to total
};

namespace detail {

inline void check_batch_lambda(const NetworkSpec& spec, std::span<const Sample* const> batch,
                               std::span<const double> lambda) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (lambda.size() != spec.schema.size())
    throw std::invalid_argument("total_loss: lambda length must match schema");
}

}  // namespace detail

inline LossBreakdown loss_from_embeddings(const NetworkSpec& spec, const ParamStore& params,
                                          std::span<const Sample* const> batch,
                                          std::span<const double> lambda,
                                          const std::vector<Tensor>& embeddings) {
  std::size_t count[2] = {0, 0};
  for (const Sample* s : batch) ++count[static_cast<int>(s->modality)];
  LossBreakdown out;
  out.per_covariate.assign(spec.schema.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double inv_n = 1.0 / static_cast<double>(count[static_cast<int>(batch[i]->modality)]);
    for (std::size_t c = 0; c < spec.schema.size(); ++c) {
      if (lambda[c] == 0.0) continue;
      const Tensor logits = classify(params, embeddings[i], c);
      const CrossEntropy ce = cross_entropy(logits.data, batch[i]->labels[c]);
      out.per_covariate[c] += lambda[c] * inv_n * ce.loss;
    }
  }
  for (double term : out.per_covariate) out.total += term;
  return out;
}

inline LossBreakdown total_loss(const NetworkSpec& spec, const ParamStore& params,
                                std::span<const Sample* const> batch,
                                std::span<const double> lambda, Mode mode = Mode::train) {
  detail::check_batch_lambda(spec, batch, lambda);
  const ForwardBatch fwd = forward_batch(spec, params, batch, mode);
  return loss_from_embeddings(spec, params, batch, lambda, fwd.embeddings);
}

namespace detail {

inline void branch_backward(const NetworkSpec& spec, Modality modality, const ParamStore& params,
                            const BranchCache& cache, std::vector<Tensor> grad_out,
                            std::vector<LayerParams>& grads) {
  const auto& layers = spec.branch(modality);
  const auto& layer_params = params.branch(modality);
  const std::size_t n = grad_out.size();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& l = layers[li];
    const LayerCache& lc = cache.layers[li];
    switch (l.kind) {
      case LayerKind::dense:
        for (std::size_t j = 0; j < n; ++j) {
          Tensor gx;
          ops::dense_backward(layer_params[li], lc.inputs[j], grad_out[j], grads[li], gx);
          grad_out[j] = std::move(gx);
        }
        break;
      case LayerKind::conv1d:
        for (std::size_t j = 0; j < n; ++j) {
          Tensor gx;
          ops::conv1d_backward(l, layer_params[li], lc.inputs[j], grad_out[j], grads[li], gx);
          grad_out[j] = std::move(gx);
        }
        break;
      case LayerKind::conv2d:
        for (std::size_t j = 0; j < n; ++j) {
          Tensor gx;
          ops::conv2d_backward(l, layer_params[li], lc.inputs[j], grad_out[j], grads[li], gx);
          grad_out[j] = std::move(gx);
        }
        break;
      case LayerKind::relu:
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < grad_out[j].numel(); ++i)
            if (lc.inputs[j].data[i] <= 0.0) grad_out[j].data[i] = 0.0;
        break;
      case LayerKind::global_avg_pool:
        for (std::size_t j = 0; j < n; ++j) {
          const Tensor& x = lc.inputs[j];
          const std::size_t channels = x.shape.back();
          const std::size_t spatial = x.numel() / channels;
          Tensor gx(x.shape);
          for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c)
              gx.data[s * channels + c] = grad_out[j][c] / static_cast<double>(spatial);
          grad_out[j] = std::move(gx);
        }
        break;
      case LayerKind::batchnorm: {
        const BnCache& bn = lc.bn;
        const std::size_t channels = grad_out[0].shape.back();
        const std::size_t spatial = grad_out[0].numel() / channels;
        const LayerParams& p = layer_params[li];
        // gamma/beta gradients are identical for both normalization paths.
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t i = s * channels + c;
              sum_g[c] += grad_out[j].data[i];
              sum_gx[c] += grad_out[j].data[i] * bn.xhat[j].data[i];
            }
        for (std::size_t c = 0; c < channels; ++c) {
          grads[li].gamma[c] += sum_gx[c];
          grads[li].beta[c] += sum_g[c];
        }
        if (bn.used_batch_stats) {
          const double count = static_cast<double>(n * spatial);
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t s = 0; s < spatial; ++s)
              for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t i = s * channels + c;
                grad_out[j].data[i] =
                    p.gamma[c] * bn.inv_std[c] *
                    (grad_out[j].data[i] - sum_g[c] / count - bn.xhat[j].data[i] * sum_gx[c] / count);
              }
        } else {
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t s = 0; s < spatial; ++s)
              for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t i = s * channels + c;
                grad_out[j].data[i] *= p.gamma[c] * bn.inv_std[c];
              }
        }
        break;
      }
    }
  }
}

}  // namespace detail

// Gradients of the batch loss w.r.t. every trainable parameter. Modality
// routing is structural: a branch with no samples in the batch keeps
// exactly-zero gradients; head gradients accumulate from all samples.
inline ParamStore backward(const NetworkSpec& spec, const ParamStore& params,
                           std::span<const Sample* const> batch, std::span<const double> lambda,
                           const ForwardBatch& fwd) {
  detail::check_batch_lambda(spec, batch, lambda);
  ParamStore grads = zeros_like(params);
  std::size_t count[2] = {0, 0};
  for (const Sample* s : batch) ++count[static_cast<int>(s->modality)];

  std::vector<Tensor> grad_emb(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    grad_emb[i] = Tensor({spec.embedding_dim});
    const double inv_n = 1.0 / static_cast<double>(count[static_cast<int>(batch[i]->modality)]);
    for (std::size_t c = 0; c < spec.schema.size(); ++c) {
      if (lambda[c] == 0.0) continue;
      const Tensor logits = classify(params, fwd.embeddings[i], c);
      const CrossEntropy ce = cross_entropy(logits.data, batch[i]->labels[c]);
      const double w = lambda[c] * inv_n;
      const HeadParams& head = params.heads[c];
      HeadParams& ghead = grads.heads[c];
      const std::size_t card = head.bias.numel();
      for (std::size_t k = 0; k < card; ++k) {
        const double gl = w * ce.grad_logits[k];
        ghead.bias[k] += gl;
        const double* hw = &head.weight.data[k * spec.embedding_dim];
        double* ghw = &ghead.weight.data[k * spec.embedding_dim];
        for (std::size_t d = 0; d < spec.embedding_dim; ++d) {
          ghw[d] += gl * fwd.embeddings[i][d];
          grad_emb[i][d] += gl * hw[d];
        }
      }
    }
  }

  for (Modality m : {Modality::A, Modality::B}) {
    const BranchCache& cache = m == Modality::A ? fwd.cache_a : fwd.cache_b;
    if (cache.batch_positions.empty()) continue;
    std::vector<Tensor> branch_grads;
    branch_grads.reserve(cache.batch_positions.size());
    for (std::size_t pos : cache.batch_positions) branch_grads.push_back(std::move(grad_emb[pos]));
    detail::branch_backward(spec, m, params, cache, std::move(branch_grads), grads.branch(m));
  }
  return grads;
}

// Central-difference gradient check over every trainable coordinate (or a
// seeded random subset when the parameter count exceeds max_coords).
// Relative error per coordinate: |a - n| / max(|a|, |n|) when that max is at
// least 1e-6, else the absolute difference.
inline double grad_check(const NetworkSpec& spec, const ParamStore& params,
                         std::span<const Sample* const> batch, std::span<const double> lambda,
                         double epsilon, std::size_t max_coords = SIZE_MAX,
                         std::uint64_t seed = 0) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be > 0");
  ParamStore work = params;
  const ForwardBatch fwd = forward_batch(spec, work, batch, Mode::train);
  const ParamStore analytic = backward(spec, work, batch, lambda, fwd);

  std::vector<double*> coords;
  std::vector<const double*> analytic_coords;
  for_each_trainable(work, [&](Tensor& t) {
    for (auto& v : t.data) coords.push_back(&v);
  });
  for_each_trainable(const_cast<ParamStore&>(analytic), [&](Tensor& t) {
    for (auto& v : t.data) analytic_coords.push_back(&v);
  });

  std::vector<std::size_t> picked;
  if (coords.size() > max_coords) {
    Rng rng(derive_seed(seed, 0xC0DE));
    picked = rng.sample_without_replacement(coords.size(), max_coords);
  } else {
    picked.resize(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) picked[i] = i;
  }

  double max_rel = 0.0;
  for (std::size_t idx : picked) {
    double* v = coords[idx];
    const double original = *v;
    *v = original + epsilon;
    const double up = total_loss(spec, work, batch, lambda, Mode::train).total;
    *v = original - epsilon;
    const double down = total_loss(spec, work, batch, lambda, Mode::train).total;
    *v = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = *analytic_coords[idx];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    const double err = scale >= 1e-6 ? std::abs(a - numeric) / scale : std::abs(a - numeric);
    max_rel = std::max(max_rel, err);
  }
  return max_rel;
}

}  // namespace dimnet
