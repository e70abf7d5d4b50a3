#pragma once

// Synthetic two-modality corpus generator. Each identity carries a latent
// vector plus covariate values; a sample is a fixed random linear map of
// [latent ; gain-scaled covariate one-hots] for its modality, plus isotropic
// Gaussian noise. Covariate recoverability is tuned through the per-covariate
// gains, cross-modal identity structure through the shared latent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimnet/data.hpp"
#include "dimnet/rng.hpp"
#include "dimnet/tensor.hpp"

namespace dimnet {

// Stream tags for child seeds, so each stage draws from its own stream.
namespace seed_stream {
constexpr std::uint64_t population = 1;
constexpr std::uint64_t modality_map_a = 2;
constexpr std::uint64_t modality_map_b = 3;
constexpr std::uint64_t samples = 4;
constexpr std::uint64_t split = 5;
}  // namespace seed_stream

// Conventions, by covariate name:
//   "identity"    -> value = id_index (cardinality must equal n_ids)
//   "gender"      -> value 0 with probability gender_balance, else 1
//   "nationality" -> categorical over nationality_weights
//   anything else -> uniform over its cardinality
inline PopulationTable sample_population(const CovariateSchema& schema, int n_ids,
                                         double gender_balance,
                                         const std::vector<double>& nationality_weights,
                                         int latent_dim, std::uint64_t seed) {
  schema.validate();
  if (n_ids < 2) throw std::invalid_argument("sample_population: n_ids must be >= 2");
  if (gender_balance < 0.0 || gender_balance > 1.0)
    throw std::invalid_argument("sample_population: gender_balance outside [0,1]");
  if (latent_dim < 1) throw std::invalid_argument("sample_population: latent_dim must be >= 1");

  const int gender_idx = schema.index_of("gender");
  const int nat_idx = schema.index_of("nationality");
  const int id_idx = schema.index_of("identity");
  if (gender_idx >= 0 && schema.covariates[gender_idx].cardinality != 2)
    throw std::invalid_argument("sample_population: gender covariate must have cardinality 2");
  if (id_idx >= 0 && schema.covariates[id_idx].cardinality != n_ids)
    throw std::invalid_argument("sample_population: identity cardinality must equal n_ids");
  if (nat_idx >= 0) {
    const auto card = static_cast<std::size_t>(schema.covariates[nat_idx].cardinality);
    if (nationality_weights.size() != card)
      throw std::invalid_argument("sample_population: nationality_weights length mismatch");
    double total = 0.0;
    for (double w : nationality_weights) {
      if (w < 0.0) throw std::invalid_argument("sample_population: negative nationality weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw std::invalid_argument("sample_population: nationality_weights must sum to 1");
  }

  Rng rng(derive_seed(seed, seed_stream::population));
  PopulationTable pop;
  pop.schema = schema;
  pop.identities.reserve(static_cast<std::size_t>(n_ids));
  for (int id = 0; id < n_ids; ++id) {
    Identity ident;
    ident.id_index = id;
    ident.labels.resize(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const int card = schema.covariates[c].cardinality;
      if (static_cast<int>(c) == id_idx)
        ident.labels[c] = id;
      else if (static_cast<int>(c) == gender_idx)
        ident.labels[c] = rng.bernoulli(gender_balance) ? 0 : 1;
      else if (static_cast<int>(c) == nat_idx)
        ident.labels[c] = static_cast<int>(rng.categorical(nationality_weights));
      else
        ident.labels[c] = static_cast<int>(rng.below(static_cast<std::uint64_t>(card)));
    }
    ident.latent.resize(static_cast<std::size_t>(latent_dim));
    for (auto& z : ident.latent) z = rng.normal();
    pop.identities.push_back(std::move(ident));
  }
  return pop;
}

// Default nationality prior: 0.65 on class 0, rest uniform.
inline std::vector<double> default_nationality_weights(int cardinality) {
  if (cardinality < 2) throw std::invalid_argument("nationality cardinality must be >= 2");
  std::vector<double> w(static_cast<std::size_t>(cardinality),
                        0.35 / static_cast<double>(cardinality - 1));
  w[0] = 0.65;
  return w;
}

// Fixed random linear maps from source space (latent + covariate one-hots)
// to each modality's feature tensor. Seeded once; shared by every sample.
struct ModalityMaps {
  ModalityShapes shapes;
  std::size_t source_dim = 0;
  Tensor map_a;  // [numel(a_shape), source_dim]
  Tensor map_b;  // [numel(b_shape), source_dim]
};

inline std::size_t source_dim_of(const CovariateSchema& schema, int latent_dim) {
  std::size_t dim = static_cast<std::size_t>(latent_dim);
  for (const auto& c : schema.covariates) dim += static_cast<std::size_t>(c.cardinality);
  return dim;
}

inline ModalityMaps make_modality_maps(const CovariateSchema& schema, int latent_dim,
                                       const ModalityShapes& shapes, std::uint64_t seed) {
  if (shapes.a_shape.empty() || shapes.b_shape.empty())
    throw std::invalid_argument("make_modality_maps: empty modality shape");
  ModalityMaps maps;
  maps.shapes = shapes;
  maps.source_dim = source_dim_of(schema, latent_dim);
  // Normalize by the number of ACTIVE source coordinates (the latent block
  // plus one hot entry per covariate), not the full one-hot width, so signal
  // strength does not shrink with covariate cardinality.
  const double active_dim = static_cast<double>(latent_dim + schema.size());
  const double scale = 1.0 / std::sqrt(active_dim);
  auto fill = [&](Tensor& m, const std::vector<std::size_t>& shape, std::uint64_t stream) {
    Rng rng(derive_seed(seed, stream));
    m = Tensor({Tensor::numel_of(shape), maps.source_dim});
    for (auto& v : m.data) v = scale * rng.normal();
  };
  fill(maps.map_a, shapes.a_shape, seed_stream::modality_map_a);
  fill(maps.map_b, shapes.b_shape, seed_stream::modality_map_b);
  return maps;
}

struct SampleCounts {
  int a_count = 0;
  int b_count = 0;
};

inline Dataset generate_samples(const PopulationTable& pop, SampleCounts per_id,
                                const ModalityMaps& maps, double noise_sigma,
                                const std::vector<double>& covariate_signal,
                                std::uint64_t seed) {
  if (per_id.a_count < 0 || per_id.b_count < 0)
    throw std::invalid_argument("generate_samples: negative per-id count");
  if (noise_sigma < 0.0) throw std::invalid_argument("generate_samples: noise_sigma < 0");
  if (covariate_signal.size() != pop.schema.size())
    throw std::invalid_argument("generate_samples: covariate_signal length mismatch");
  const std::size_t expected_dim = source_dim_of(
      pop.schema, static_cast<int>(pop.identities.empty() ? 0 : pop.identities[0].latent.size()));
  if (maps.source_dim != expected_dim)
    throw std::invalid_argument("generate_samples: modality map source dim mismatch");

  Dataset ds;
  ds.schema = pop.schema;
  ds.shapes = maps.shapes;
  ds.split_tag = SplitTag::train;

  Rng rng(derive_seed(seed, seed_stream::samples));
  std::vector<double> source(maps.source_dim);
  for (const auto& ident : pop.identities) {
    std::size_t k = 0;
    for (double z : ident.latent) source[k++] = z;
    for (std::size_t c = 0; c < pop.schema.size(); ++c) {
      const int card = pop.schema.covariates[c].cardinality;
      for (int v = 0; v < card; ++v)
        source[k++] = (v == ident.labels[c]) ? covariate_signal[c] : 0.0;
    }
    auto emit = [&](Modality mod, int count) {
      const Tensor& map = mod == Modality::A ? maps.map_a : maps.map_b;
      const auto& shape = maps.shapes.of(mod);
      const std::size_t numel = Tensor::numel_of(shape);
      for (int s = 0; s < count; ++s) {
        Sample sample;
        sample.modality = mod;
        sample.id_index = ident.id_index;
        sample.labels = ident.labels;
        sample.features = Tensor(shape);
        for (std::size_t row = 0; row < numel; ++row) {
          double acc = 0.0;
          const double* w = &map.data[row * maps.source_dim];
          for (std::size_t j = 0; j < maps.source_dim; ++j) acc += w[j] * source[j];
          if (noise_sigma > 0.0) acc += noise_sigma * rng.normal();
          sample.features.data[row] = acc;
        }
        ds.samples.push_back(std::move(sample));
      }
    };
    emit(Modality::A, per_id.a_count);
    emit(Modality::B, per_id.b_count);
  }
  return ds;
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Splits {
  Dataset train, val, test;
};

// Identity-disjoint split. Identities are shuffled by seed, then counts are
// assigned by floor + largest remainder; every nonzero-ratio split is
// guaranteed at least one identity (taken from the largest split if needed).
inline Splits split_by_identity(const Dataset& ds, SplitRatios ratios, std::uint64_t seed) {
  const double parts[3] = {ratios.train, ratios.val, ratios.test};
  double total = 0.0;
  for (double r : parts) {
    if (r < 0.0) throw std::invalid_argument("split_by_identity: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("split_by_identity: ratios must sum to 1");

  std::vector<int> ids = ds.identity_set();
  std::sort(ids.begin(), ids.end());
  int nonzero = 0;
  for (double r : parts)
    if (r > 0.0) ++nonzero;
  if (static_cast<int>(ids.size()) < nonzero)
    throw std::invalid_argument("split_by_identity: fewer identities than nonzero splits");

  Rng rng(derive_seed(seed, seed_stream::split));
  rng.shuffle(ids);

  const std::size_t n = ids.size();
  std::size_t counts[3];
  double fracs[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * parts[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    fracs[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (fracs[i] > fracs[best]) best = i;
    ++counts[best];
    fracs[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (parts[i] > 0.0 && counts[i] == 0) {
      int donor = 0;
      for (int j = 1; j < 3; ++j)
        if (counts[j] > counts[donor]) donor = j;
      if (counts[donor] <= 1) throw std::invalid_argument("split_by_identity: not enough identities");
      --counts[donor];
      ++counts[i];
    }
  }

  std::vector<int> owner_of_id;  // id_index -> 0/1/2
  int max_id = 0;
  for (int id : ids) max_id = std::max(max_id, id);
  owner_of_id.assign(static_cast<std::size_t>(max_id) + 1, 0);
  std::size_t pos = 0;
  for (int split = 0; split < 3; ++split)
    for (std::size_t c = 0; c < counts[split]; ++c) owner_of_id[static_cast<std::size_t>(ids[pos++])] = split;

  Splits out;
  Dataset* slots[3] = {&out.train, &out.val, &out.test};
  const SplitTag tags[3] = {SplitTag::train, SplitTag::val, SplitTag::test};
  for (int i = 0; i < 3; ++i) {
    slots[i]->schema = ds.schema;
    slots[i]->shapes = ds.shapes;
    slots[i]->split_tag = tags[i];
  }
  for (const auto& s : ds.samples)
    slots[owner_of_id[static_cast<std::size_t>(s.id_index)]]->samples.push_back(s);
  return out;
}

}  // namespace dimnet
