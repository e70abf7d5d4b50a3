#pragma once

// Network structure: layer specs, shape inference, parameter storage and
// initialization. Two embedding branches (one per modality) share a bank of
// per-covariate linear classifier heads operating on the d-dim embedding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimnet/data.hpp"
#include "dimnet/rng.hpp"
#include "dimnet/tensor.hpp"

namespace dimnet {

struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LayerKind : std::uint8_t { dense, conv1d, conv2d, batchnorm, relu, global_avg_pool };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    default: return "global_avg_pool";
  }
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;        // dense: output features
  std::size_t filter_size = 0;  // conv: k (square for conv2d)
  std::size_t filters = 0;      // conv: output channels
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec dense(std::size_t units) { return {LayerKind::dense, units, 0, 0, 1, 0}; }
  static LayerSpec conv1d(std::size_t k, std::size_t f, std::size_t s, std::size_t p) {
    return {LayerKind::conv1d, 0, k, f, s, p};
  }
  static LayerSpec conv2d(std::size_t k, std::size_t f, std::size_t s, std::size_t p) {
    return {LayerKind::conv2d, 0, k, f, s, p};
  }
  static LayerSpec batchnorm() { return {LayerKind::batchnorm, 0, 0, 0, 1, 0}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1, 0}; }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool, 0, 0, 0, 1, 0}; }

  bool operator==(const LayerSpec&) const = default;
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                const char* what) {
  if (s < 1) throw std::invalid_argument(std::string(what) + ": stride must be >= 1");
  if (in + 2 * p < k) throw std::invalid_argument(std::string(what) + ": input smaller than filter");
  return (in + 2 * p - k) / s + 1;
}

// Output shape of one layer given its input shape.
inline std::vector<std::size_t> layer_output_shape(const LayerSpec& layer,
                                                   const std::vector<std::size_t>& in) {
  switch (layer.kind) {
    case LayerKind::dense:
      if (layer.units == 0) throw std::invalid_argument("dense: units must be > 0");
      return {layer.units};
    case LayerKind::conv1d: {
      if (in.size() != 2) throw std::invalid_argument("conv1d: input must be [T, C]");
      return {conv_out_dim(in[0], layer.filter_size, layer.stride, layer.padding, "conv1d"),
              layer.filters};
    }
    case LayerKind::conv2d: {
      if (in.size() != 3) throw std::invalid_argument("conv2d: input must be [H, W, C]");
      return {conv_out_dim(in[0], layer.filter_size, layer.stride, layer.padding, "conv2d"),
              conv_out_dim(in[1], layer.filter_size, layer.stride, layer.padding, "conv2d"),
              layer.filters};
    }
    case LayerKind::batchnorm:
    case LayerKind::relu:
      return in;
    case LayerKind::global_avg_pool:
      if (in.size() < 2) throw std::invalid_argument("global_avg_pool: input must have spatial dims");
      return {in.back()};
  }
  throw std::logic_error("unreachable");
}

inline std::vector<std::vector<std::size_t>> infer_shapes(const std::vector<std::size_t>& input,
                                                          const std::vector<LayerSpec>& layers) {
  std::vector<std::vector<std::size_t>> shapes;
  shapes.reserve(layers.size() + 1);
  shapes.push_back(input);
  for (const auto& layer : layers) shapes.push_back(layer_output_shape(layer, shapes.back()));
  return shapes;
}

struct NetworkSpec {
  CovariateSchema schema;
  ModalityShapes input_shapes;
  std::vector<LayerSpec> branch_a;
  std::vector<LayerSpec> branch_b;
  std::size_t embedding_dim = 0;

  const std::vector<LayerSpec>& branch(Modality m) const {
    return m == Modality::A ? branch_a : branch_b;
  }

  void validate() const {
    schema.validate();
    if (embedding_dim == 0) throw std::invalid_argument("NetworkSpec: embedding_dim must be > 0");
    for (Modality m : {Modality::A, Modality::B}) {
      const auto shapes = infer_shapes(input_shapes.of(m), branch(m));
      const auto& out = shapes.back();
      if (out.size() != 1 || out[0] != embedding_dim)
        throw std::invalid_argument(std::string("NetworkSpec: branch ") + modality_char(m) +
                                    " outputs " + shape_string(out) + ", expected [" +
                                    std::to_string(embedding_dim) + "]");
    }
  }

  bool operator==(const NetworkSpec&) const = default;
};

// Per-layer parameters. Only the slots relevant to the layer kind are
// non-empty. Running stats are state, not trainable parameters: they are
// excluded from gradients, momentum and weight decay.
struct LayerParams {
  Tensor weight, bias;                // dense / conv
  Tensor gamma, beta;                 // batchnorm scale / shift
  Tensor running_mean, running_var;   // batchnorm running stats
};

struct HeadParams {
  Tensor weight;  // [cardinality, d]
  Tensor bias;    // [cardinality]
};

struct ParamStore {
  std::vector<LayerParams> branch_a;
  std::vector<LayerParams> branch_b;
  std::vector<HeadParams> heads;

  std::vector<LayerParams>& branch(Modality m) { return m == Modality::A ? branch_a : branch_b; }
  const std::vector<LayerParams>& branch(Modality m) const {
    return m == Modality::A ? branch_a : branch_b;
  }
};

namespace detail {

inline std::size_t conv_fan_in(const LayerSpec& l, const std::vector<std::size_t>& in) {
  if (l.kind == LayerKind::conv1d) return l.filter_size * in[1];
  return l.filter_size * l.filter_size * in[2];
}

}  // namespace detail

// Trainable tensors in canonical order: branch A layers, branch B layers,
// heads; within a layer weight then bias (or gamma then beta). This order is
// shared by the checkpoint format, gradient indexing and the optimizer.
template <typename Store, typename Fn>
void for_each_trainable(Store& params, Fn&& fn) {
  for (auto* branch : {&params.branch_a, &params.branch_b})
    for (auto& layer : *branch) {
      if (!layer.weight.empty()) fn(layer.weight);
      if (!layer.bias.empty()) fn(layer.bias);
      if (!layer.gamma.empty()) fn(layer.gamma);
      if (!layer.beta.empty()) fn(layer.beta);
    }
  for (auto& head : params.heads) {
    fn(head.weight);
    fn(head.bias);
  }
}

inline ParamStore zeros_like(const ParamStore& src) {
  ParamStore out = src;
  auto zero = [](Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); };
  for (auto* branch : {&out.branch_a, &out.branch_b})
    for (auto& layer : *branch) {
      zero(layer.weight);
      zero(layer.bias);
      zero(layer.gamma);
      zero(layer.beta);
      zero(layer.running_mean);
      zero(layer.running_var);
    }
  for (auto& head : out.heads) {
    zero(head.weight);
    zero(head.bias);
  }
  return out;
}

// Fan-in-scaled Gaussian init (std = sqrt(2/fan_in)) for conv/dense weights,
// zero biases, BN scale 1 / shift 0, running stats (0, 1). Each tensor draws
// from its own derived seed so init is independent of evaluation order.
inline ParamStore init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore params;
  auto gaussian_fill = [&](Tensor& t, double stddev, std::uint64_t stream) {
    Rng rng(derive_seed(seed, stream));
    for (auto& v : t.data) v = stddev * rng.normal();
  };
  std::uint64_t stream = 0;
  for (Modality m : {Modality::A, Modality::B}) {
    const auto shapes = infer_shapes(spec.input_shapes.of(m), spec.branch(m));
    auto& layers = params.branch(m);
    for (std::size_t i = 0; i < spec.branch(m).size(); ++i) {
      const LayerSpec& l = spec.branch(m)[i];
      const auto& in = shapes[i];
      LayerParams p;
      switch (l.kind) {
        case LayerKind::dense: {
          const std::size_t fan_in = Tensor::numel_of(in);
          p.weight = Tensor({l.units, fan_in});
          p.bias = Tensor({l.units});
          gaussian_fill(p.weight, std::sqrt(2.0 / static_cast<double>(fan_in)), ++stream);
          break;
        }
        case LayerKind::conv1d: {
          p.weight = Tensor({l.filter_size, in[1], l.filters});
          p.bias = Tensor({l.filters});
          gaussian_fill(p.weight,
                        std::sqrt(2.0 / static_cast<double>(detail::conv_fan_in(l, in))), ++stream);
          break;
        }
        case LayerKind::conv2d: {
          p.weight = Tensor({l.filter_size, l.filter_size, in[2], l.filters});
          p.bias = Tensor({l.filters});
          gaussian_fill(p.weight,
                        std::sqrt(2.0 / static_cast<double>(detail::conv_fan_in(l, in))), ++stream);
          break;
        }
        case LayerKind::batchnorm: {
          const std::size_t channels = in.back();
          p.gamma = Tensor({channels}, 1.0);
          p.beta = Tensor({channels});
          p.running_mean = Tensor({channels});
          p.running_var = Tensor({channels}, 1.0);
          break;
        }
        case LayerKind::relu:
        case LayerKind::global_avg_pool:
          break;
      }
      layers.push_back(std::move(p));
    }
  }
  for (const auto& cov : spec.schema.covariates) {
    HeadParams h;
    h.weight = Tensor({static_cast<std::size_t>(cov.cardinality), spec.embedding_dim});
    h.bias = Tensor({static_cast<std::size_t>(cov.cardinality)});
    gaussian_fill(h.weight, std::sqrt(2.0 / static_cast<double>(spec.embedding_dim)), ++stream);
    params.heads.push_back(std::move(h));
  }
  return params;
}

// --- stock architectures -------------------------------------------------

namespace builders {

inline void conv_block_1d(std::vector<LayerSpec>& out, std::size_t f, std::size_t s) {
  out.push_back(LayerSpec::conv1d(3, f, s, 1));
  out.push_back(LayerSpec::batchnorm());
  out.push_back(LayerSpec::relu());
}

inline void conv_block_2d(std::vector<LayerSpec>& out, std::size_t f, std::size_t s) {
  out.push_back(LayerSpec::conv2d(3, f, s, 1));
  out.push_back(LayerSpec::batchnorm());
  out.push_back(LayerSpec::relu());
}

}  // namespace builders

// Dense-relu stack for flat inputs.
inline NetworkSpec mlp_spec(const CovariateSchema& schema, const ModalityShapes& shapes,
                            const std::vector<std::size_t>& hidden, std::size_t embedding_dim) {
  NetworkSpec spec;
  spec.schema = schema;
  spec.input_shapes = shapes;
  spec.embedding_dim = embedding_dim;
  for (auto* branch : {&spec.branch_a, &spec.branch_b}) {
    for (std::size_t h : hidden) {
      branch->push_back(LayerSpec::dense(h));
      branch->push_back(LayerSpec::relu());
    }
    branch->push_back(LayerSpec::dense(embedding_dim));
  }
  spec.validate();
  return spec;
}

// Reduced-width conv stack: four stride-2 conv-BN-relu blocks, a final
// embedding_dim conv block and global average pooling on each branch.
inline NetworkSpec desk_conv_spec(const CovariateSchema& schema, const ModalityShapes& shapes,
                                  std::size_t embedding_dim = 64) {
  NetworkSpec spec;
  spec.schema = schema;
  spec.input_shapes = shapes;
  spec.embedding_dim = embedding_dim;
  const std::size_t widths[4] = {16, 24, 32, 48};
  if (shapes.a_shape.size() != 2)
    throw std::invalid_argument("desk_conv_spec: A input must be [T, C]");
  if (shapes.b_shape.size() != 3)
    throw std::invalid_argument("desk_conv_spec: B input must be [H, W, C]");
  for (std::size_t f : widths) builders::conv_block_1d(spec.branch_a, f, 2);
  builders::conv_block_1d(spec.branch_a, embedding_dim, 2);
  spec.branch_a.push_back(LayerSpec::global_avg_pool());
  for (std::size_t f : widths) builders::conv_block_2d(spec.branch_b, f, 2);
  builders::conv_block_2d(spec.branch_b, embedding_dim, 2);
  spec.branch_b.push_back(LayerSpec::global_avg_pool());
  spec.validate();
  return spec;
}

// Full-width configuration from the reference architecture table: grouped
// conv stacks (lead conv plus a stacked pair per group; the pairs are plain
// stacked convs, no skip connections), a final 64-filter conv and average
// pooling. Branch A expects [T, 64] mel-style input, branch B [H, W, 3].
inline NetworkSpec full_scale_conv_spec(const CovariateSchema& schema,
                                        const ModalityShapes& shapes) {
  NetworkSpec spec;
  spec.schema = schema;
  spec.input_shapes = shapes;
  spec.embedding_dim = 64;
  struct Group {
    std::size_t lead, pair;
    std::size_t pair_lead_stride;
  };
  const Group voice_groups[4] = {{256, 256, 1}, {384, 384, 2}, {256, 576, 2}, {256, 864, 2}};
  for (const auto& g : voice_groups) {
    builders::conv_block_1d(spec.branch_a, g.lead, 2);
    builders::conv_block_1d(spec.branch_a, g.pair, g.pair_lead_stride);
    builders::conv_block_1d(spec.branch_a, g.pair, 1);
  }
  builders::conv_block_1d(spec.branch_a, 64, 2);
  spec.branch_a.push_back(LayerSpec::global_avg_pool());
  const std::size_t face_widths[4] = {64, 128, 256, 512};
  for (std::size_t f : face_widths) {
    builders::conv_block_2d(spec.branch_b, f, 2);
    builders::conv_block_2d(spec.branch_b, f, 1);
    builders::conv_block_2d(spec.branch_b, f, 1);
  }
  builders::conv_block_2d(spec.branch_b, 64, 2);
  spec.branch_b.push_back(LayerSpec::global_avg_pool());
  spec.validate();
  return spec;
}

}  // namespace dimnet
