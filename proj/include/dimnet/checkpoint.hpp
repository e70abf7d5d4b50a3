#pragma once

// Checkpoint format, version 1: magic "DIMNET1\n", a text block describing
// the NetworkSpec, the line "end", then all parameter tensors as
// little-endian IEEE-754 doubles in canonical order: branch A layers,
// branch B layers, classifier heads; within a layer weight, bias, gamma,
// beta, running_mean, running_var (present slots only). The loader rebuilds
// shapes from the spec text and validates the byte count.

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dimnet/data.hpp"
#include "dimnet/net.hpp"

namespace dimnet {

namespace detail {

template <typename Store, typename Fn>
void for_each_stored_tensor(Store& params, Fn&& fn) {
  for (auto* branch : {&params.branch_a, &params.branch_b})
    for (auto& layer : *branch)
      for (auto* t : {&layer.weight, &layer.bias, &layer.gamma, &layer.beta, &layer.running_mean,
                      &layer.running_var})
        if (!t->empty()) fn(*t);
  for (auto& head : params.heads) {
    fn(head.weight);
    fn(head.bias);
  }
}

inline void put_le_double(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_le_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline void append_layer_line(std::string& out, const LayerSpec& l) {
  out += layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::dense:
      out += ' ' + std::to_string(l.units);
      break;
    case LayerKind::conv1d:
    case LayerKind::conv2d:
      out += ' ' + std::to_string(l.filter_size) + ' ' + std::to_string(l.filters) + ' ' +
             std::to_string(l.stride) + ' ' + std::to_string(l.padding);
      break;
    default:
      break;
  }
  out += '\n';
}

inline LayerSpec parse_layer_line(std::istream& in) {
  std::string kind;
  if (!(in >> kind)) throw io_error("checkpoint: truncated layer list");
  if (kind == "dense") {
    std::size_t units;
    if (!(in >> units)) throw io_error("checkpoint: bad dense layer");
    return LayerSpec::dense(units);
  }
  if (kind == "conv1d" || kind == "conv2d") {
    std::size_t k, f, s, p;
    if (!(in >> k >> f >> s >> p)) throw io_error("checkpoint: bad conv layer");
    return kind == "conv1d" ? LayerSpec::conv1d(k, f, s, p) : LayerSpec::conv2d(k, f, s, p);
  }
  if (kind == "batchnorm") return LayerSpec::batchnorm();
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "global_avg_pool") return LayerSpec::global_avg_pool();
  throw io_error("checkpoint: unknown layer kind '" + kind + "'");
}

}  // namespace detail

inline std::string serialize_checkpoint(const NetworkSpec& spec, const ParamStore& params) {
  std::string out = "DIMNET1\n";
  out += "schema " + std::to_string(spec.schema.size());
  for (const auto& c : spec.schema.covariates)
    out += ' ' + c.name + ':' + std::to_string(c.cardinality);
  out += '\n';
  out += "input A " + std::to_string(spec.input_shapes.a_shape.size());
  for (std::size_t d : spec.input_shapes.a_shape) out += ' ' + std::to_string(d);
  out += " B " + std::to_string(spec.input_shapes.b_shape.size());
  for (std::size_t d : spec.input_shapes.b_shape) out += ' ' + std::to_string(d);
  out += '\n';
  out += "embedding_dim " + std::to_string(spec.embedding_dim) + '\n';
  for (Modality m : {Modality::A, Modality::B}) {
    out += std::string("branch ") + modality_char(m) + ' ' +
           std::to_string(spec.branch(m).size()) + '\n';
    for (const auto& l : spec.branch(m)) detail::append_layer_line(out, l);
  }
  out += "end\n";
  detail::for_each_stored_tensor(const_cast<ParamStore&>(params), [&](Tensor& t) {
    for (double v : t.data) detail::put_le_double(out, v);
  });
  return out;
}

inline void save_checkpoint(const NetworkSpec& spec, const ParamStore& params,
                            const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "' for writing");
  const std::string blob = serialize_checkpoint(spec, params);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw io_error("write failed for '" + path + "'");
}

struct Checkpoint {
  NetworkSpec spec;
  ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string magic = "DIMNET1\n";
  if (blob.rfind(magic, 0) != 0) throw io_error(path + ": not a DIMNET1 checkpoint");
  const std::size_t end_pos = blob.find("\nend\n");
  if (end_pos == std::string::npos) throw io_error(path + ": missing spec terminator");
  std::istringstream header(blob.substr(magic.size(), end_pos + 1 - magic.size()));

  Checkpoint ck;
  std::string tok;
  std::size_t n_cov = 0;
  if (!(header >> tok >> n_cov) || tok != "schema") throw io_error(path + ": bad schema line");
  for (std::size_t i = 0; i < n_cov; ++i) {
    std::string c;
    if (!(header >> c)) throw io_error(path + ": truncated schema");
    const auto colon = c.find(':');
    if (colon == std::string::npos) throw io_error(path + ": bad covariate '" + c + "'");
    ck.spec.schema.covariates.push_back({c.substr(0, colon), std::stoi(c.substr(colon + 1))});
  }
  auto read_shape = [&](const char* tag) {
    std::string t;
    std::size_t rank = 0;
    if (!(header >> t >> rank) || t != tag) throw io_error(path + ": bad input shape");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape)
      if (!(header >> d)) throw io_error(path + ": bad input shape");
    return shape;
  };
  if (!(header >> tok) || tok != "input") throw io_error(path + ": bad input line");
  ck.spec.input_shapes.a_shape = read_shape("A");
  ck.spec.input_shapes.b_shape = read_shape("B");
  if (!(header >> tok >> ck.spec.embedding_dim) || tok != "embedding_dim")
    throw io_error(path + ": bad embedding_dim line");
  for (Modality m : {Modality::A, Modality::B}) {
    std::string branch_tag;
    std::size_t n_layers = 0;
    if (!(header >> tok >> branch_tag >> n_layers) || tok != "branch" ||
        branch_tag != std::string(1, modality_char(m)))
      throw io_error(path + ": bad branch header");
    auto& layers = m == Modality::A ? ck.spec.branch_a : ck.spec.branch_b;
    for (std::size_t i = 0; i < n_layers; ++i) layers.push_back(detail::parse_layer_line(header));
  }
  ck.spec.validate();

  // Allocate tensors from the spec, then fill from the binary section.
  ck.params = init_params(ck.spec, 0);
  std::size_t expected = 0;
  detail::for_each_stored_tensor(ck.params, [&](Tensor& t) { expected += t.numel(); });
  const std::size_t binary_off = end_pos + 5;
  if (blob.size() - binary_off != expected * 8)
    throw io_error(path + ": parameter payload is " + std::to_string(blob.size() - binary_off) +
                   " bytes, expected " + std::to_string(expected * 8));
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data()) + binary_off;
  detail::for_each_stored_tensor(ck.params, [&](Tensor& t) {
    for (auto& v : t.data) {
      v = detail::get_le_double(bytes);
      bytes += 8;
    }
  });
  return ck;
}

}  // namespace dimnet
