#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "dimnet/tensor.hpp"

namespace dimnet {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Modality : std::uint8_t { A = 0, B = 1 };

inline char modality_char(Modality m) { return m == Modality::A ? 'A' : 'B'; }

// Ordered covariate set. Order is canonical: it indexes classifier heads,
// label vectors and lambda weights everywhere downstream.
struct Covariate {
  std::string name;
  int cardinality = 0;

  bool operator==(const Covariate&) const = default;
};

struct CovariateSchema {
  std::vector<Covariate> covariates;

  std::size_t size() const { return covariates.size(); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < covariates.size(); ++i)
      if (covariates[i].name == name) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& c : covariates) {
      if (c.cardinality < 2)
        throw std::invalid_argument("schema: covariate '" + c.name + "' needs cardinality >= 2");
      // names are tokens in the dataset and checkpoint text formats
      if (c.name.empty() || c.name.find_first_of(" \t\n:,") != std::string::npos)
        throw std::invalid_argument("schema: covariate name '" + c.name +
                                    "' must be nonempty without whitespace, ':' or ','");
      if (!seen.insert(c.name).second)
        throw std::invalid_argument("schema: duplicate covariate name '" + c.name + "'");
    }
  }

  bool operator==(const CovariateSchema&) const = default;
};

using LabelVector = std::vector<int>;  // one value per schema covariate, schema order

struct Identity {
  int id_index = 0;
  LabelVector labels;
  std::vector<double> latent;
};

struct PopulationTable {
  CovariateSchema schema;
  std::vector<Identity> identities;
};

// Feature shapes per modality. A is 1D (length x channels), B is 2D
// (h x w x channels); either may be a flat vector in MLP mode.
struct ModalityShapes {
  std::vector<std::size_t> a_shape;
  std::vector<std::size_t> b_shape;

  const std::vector<std::size_t>& of(Modality m) const {
    return m == Modality::A ? a_shape : b_shape;
  }
  bool operator==(const ModalityShapes&) const = default;
};

struct Sample {
  Modality modality = Modality::A;
  int id_index = 0;
  LabelVector labels;
  Tensor features;
};

enum class SplitTag : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    default: return "test";
  }
}

inline SplitTag split_from_name(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "val") return SplitTag::val;
  if (s == "test") return SplitTag::test;
  throw io_error("unknown split tag '" + s + "'");
}

struct Dataset {
  CovariateSchema schema;
  ModalityShapes shapes;
  SplitTag split_tag = SplitTag::train;
  std::vector<Sample> samples;

  std::vector<int> identity_set() const {
    std::unordered_set<int> ids;
    for (const auto& s : samples) ids.insert(s.id_index);
    return {ids.begin(), ids.end()};
  }
  std::size_t count(Modality m) const {
    std::size_t n = 0;
    for (const auto& s : samples)
      if (s.modality == m) ++n;
    return n;
  }
};

namespace detail {

// %.17g round-trips IEEE doubles exactly.
inline void append_real(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

// DIMSET text format, version 1.
//
//   DIMSET 1 <split> <C> <name:card>{C} A <ra> <dims>{ra} B <rb> <dims>{rb} <n>
//   <id_index> <A|B> <label>{C} <feature>{numel}        (n lines)
//
// Single spaces, '\n' line ends, reals printed with %.17g. write -> read ->
// write reproduces the file byte for byte.
inline std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  out += "DIMSET 1 ";
  out += split_name(ds.split_tag);
  out += ' ' + std::to_string(ds.schema.size());
  for (const auto& c : ds.schema.covariates)
    out += ' ' + c.name + ':' + std::to_string(c.cardinality);
  out += " A " + std::to_string(ds.shapes.a_shape.size());
  for (std::size_t d : ds.shapes.a_shape) out += ' ' + std::to_string(d);
  out += " B " + std::to_string(ds.shapes.b_shape.size());
  for (std::size_t d : ds.shapes.b_shape) out += ' ' + std::to_string(d);
  out += ' ' + std::to_string(ds.samples.size());
  out += '\n';
  for (const auto& s : ds.samples) {
    out += std::to_string(s.id_index);
    out += ' ';
    out += modality_char(s.modality);
    for (int label : s.labels) out += ' ' + std::to_string(label);
    for (double f : s.features.data) {
      out += ' ';
      detail::append_real(out, f);
    }
    out += '\n';
  }
  return out;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "' for writing");
  const std::string text = serialize_dataset(ds);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw io_error("write failed for '" + path + "'");
}

inline Dataset parse_dataset(std::istream& in, const std::string& origin) {
  auto fail = [&](const std::string& msg) -> io_error {
    return io_error(origin + ": " + msg);
  };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "DIMSET" || version != 1)
    throw fail("not a DIMSET 1 file");
  std::string split;
  std::size_t n_cov = 0;
  if (!(in >> split >> n_cov)) throw fail("bad header");
  Dataset ds;
  ds.split_tag = split_from_name(split);
  for (std::size_t i = 0; i < n_cov; ++i) {
    std::string tok;
    if (!(in >> tok)) throw fail("truncated covariate list");
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw fail("bad covariate token '" + tok + "'");
    ds.schema.covariates.push_back(
        {tok.substr(0, colon), std::stoi(tok.substr(colon + 1))});
  }
  ds.schema.validate();
  auto read_shape = [&](char tag) {
    std::string t;
    std::size_t rank = 0;
    if (!(in >> t >> rank) || t != std::string(1, tag)) throw fail("bad shape header");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape)
      if (!(in >> d) || d == 0) throw fail("bad shape dimension");
    return shape;
  };
  ds.shapes.a_shape = read_shape('A');
  ds.shapes.b_shape = read_shape('B');
  std::size_t n_samples = 0;
  if (!(in >> n_samples)) throw fail("missing sample count");
  const std::size_t a_numel = Tensor::numel_of(ds.shapes.a_shape);
  const std::size_t b_numel = Tensor::numel_of(ds.shapes.b_shape);
  ds.samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Sample s;
    std::string mod;
    if (!(in >> s.id_index >> mod)) throw fail("truncated sample " + std::to_string(i));
    if (mod == "A")
      s.modality = Modality::A;
    else if (mod == "B")
      s.modality = Modality::B;
    else
      throw fail("bad modality '" + mod + "'");
    s.labels.resize(n_cov);
    for (std::size_t c = 0; c < n_cov; ++c) {
      if (!(in >> s.labels[c])) throw fail("truncated labels in sample " + std::to_string(i));
      if (s.labels[c] < 0 || s.labels[c] >= ds.schema.covariates[c].cardinality)
        throw fail("label out of range in sample " + std::to_string(i));
    }
    const auto& shape = ds.shapes.of(s.modality);
    const std::size_t numel = s.modality == Modality::A ? a_numel : b_numel;
    s.features = Tensor(shape);
    for (std::size_t k = 0; k < numel; ++k)
      if (!(in >> s.features.data[k]))
        throw fail("truncated features in sample " + std::to_string(i));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "'");
  return parse_dataset(f, path);
}

}  // namespace dimnet
