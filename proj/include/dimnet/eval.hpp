#pragma once

// Test-trial construction and the four evaluation protocols: 1:2 / 1:N
// matching, verification EER and retrieval mAP, plus per-modality covariate
// accuracy. Cosine ranking ties are broken toward the lowest index, and the
// true match's gallery position is randomized per trial, so an uninformative
// embedding scores 1/N in expectation.

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimnet/data.hpp"
#include "dimnet/forward.hpp"
#include "dimnet/parallel.hpp"
#include "dimnet/rng.hpp"

namespace dimnet {

struct EmbeddingRow {
  std::size_t sample_index = 0;
  Modality modality = Modality::A;
  int id_index = 0;
  LabelVector labels;
  std::vector<double> embedding;
};

struct EmbeddingTable {
  CovariateSchema schema;
  std::size_t dim = 0;
  std::vector<EmbeddingRow> rows;  // rows[i].sample_index == i for embed_all output
};

inline EmbeddingTable embed_all(const NetworkSpec& spec, const ParamStore& params,
                                const Dataset& ds, int threads = 1) {
  if (!(ds.schema == spec.schema))
    throw std::invalid_argument("embed_all: dataset schema does not match checkpoint");
  EmbeddingTable table;
  table.schema = ds.schema;
  table.dim = spec.embedding_dim;
  table.rows.resize(ds.samples.size());
  parallel_ranges(ds.samples.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Sample& s = ds.samples[i];
      EmbeddingRow& row = table.rows[i];
      row.sample_index = i;
      row.modality = s.modality;
      row.id_index = s.id_index;
      row.labels = s.labels;
      row.embedding = forward_embed(spec, params, s, Mode::infer).data;
    }
  });
  return table;
}

enum class Direction : std::uint8_t { A2B, B2A };

inline const char* direction_name(Direction d) { return d == Direction::A2B ? "a2b" : "b2a"; }

enum class Stratification : std::uint8_t { U, G, N, GN };

inline const char* stratification_name(Stratification s) {
  switch (s) {
    case Stratification::U: return "U";
    case Stratification::G: return "G";
    case Stratification::N: return "N";
    default: return "GN";
  }
}

// Covariates a stratum must hold fixed. G and N refer to the schema
// covariates named "gender" and "nationality".
inline std::vector<std::size_t> strata_covariates(Stratification strat,
                                                  const CovariateSchema& schema) {
  std::vector<std::size_t> out;
  auto require = [&](const char* name) {
    const int idx = schema.index_of(name);
    if (idx < 0)
      throw std::invalid_argument(std::string("stratification needs covariate '") + name +
                                  "' which is not in the schema");
    out.push_back(static_cast<std::size_t>(idx));
  };
  if (strat == Stratification::G || strat == Stratification::GN) require("gender");
  if (strat == Stratification::N || strat == Stratification::GN) require("nationality");
  return out;
}

struct MatchTrial {
  std::size_t probe = 0;               // sample index of the probe
  std::vector<std::size_t> gallery;    // N sample indices, opposite modality
  std::size_t answer = 0;              // gallery position of the true match
};

struct VerifyPair {
  std::size_t probe = 0;
  std::size_t partner = 0;
  bool positive = false;
};

struct TrialSet {
  enum class Kind : std::uint8_t { match, verify } kind = Kind::match;
  Direction direction = Direction::A2B;
  Stratification stratification = Stratification::U;
  std::size_t N = 2;
  std::vector<MatchTrial> match_trials;
  std::vector<VerifyPair> pairs;
  std::size_t skipped = 0;  // positive pairs dropped because the stratum was too small
};

// Exhaustively enumerates positive cross-modal pairs (every probe sample x
// every same-identity gallery sample) and augments each with N-1 imposters:
// identities drawn uniformly without replacement from the probe's stratum,
// then one uniform gallery-modality sample per drawn identity. The match's
// gallery position is uniform per trial.
inline TrialSet build_match_trials(const Dataset& test, Direction direction, std::size_t N,
                                   Stratification strat, std::uint64_t seed) {
  if (N < 2) throw std::invalid_argument("build_match_trials: N must be >= 2");
  const Modality probe_mod = direction == Direction::A2B ? Modality::A : Modality::B;
  const auto strat_covs = strata_covariates(strat, test.schema);

  std::map<int, std::vector<std::size_t>> probe_samples, gallery_samples;
  std::map<int, LabelVector> id_labels;
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    const Sample& s = test.samples[i];
    (s.modality == probe_mod ? probe_samples : gallery_samples)[s.id_index].push_back(i);
    id_labels.emplace(s.id_index, s.labels);
  }

  // stratum key -> identities with at least one gallery-modality sample
  std::map<std::vector<int>, std::vector<int>> stratum_ids;
  for (const auto& [id, samples] : gallery_samples) {
    std::vector<int> key;
    for (std::size_t c : strat_covs) key.push_back(id_labels[id][c]);
    stratum_ids[key].push_back(id);
  }

  TrialSet set;
  set.kind = TrialSet::Kind::match;
  set.direction = direction;
  set.stratification = strat;
  set.N = N;
  Rng rng(derive_seed(seed, 0xE7A1));

  for (const auto& [id, probes] : probe_samples) {
    const auto gal_it = gallery_samples.find(id);
    if (gal_it == gallery_samples.end()) continue;
    std::vector<int> key;
    for (std::size_t c : strat_covs) key.push_back(id_labels[id][c]);
    const auto& pool = stratum_ids[key];
    std::vector<int> imposter_pool;
    for (int other : pool)
      if (other != id) imposter_pool.push_back(other);
    for (std::size_t probe : probes) {
      for (std::size_t match : gal_it->second) {
        if (imposter_pool.size() < N - 1) {
          ++set.skipped;
          continue;
        }
        MatchTrial trial;
        trial.probe = probe;
        const auto picks = rng.sample_without_replacement(imposter_pool.size(), N - 1);
        std::vector<std::size_t> imposters;
        imposters.reserve(N - 1);
        for (std::size_t p : picks) {
          const auto& candidates = gallery_samples[imposter_pool[p]];
          imposters.push_back(candidates[rng.below(candidates.size())]);
        }
        trial.answer = static_cast<std::size_t>(rng.below(N));
        trial.gallery.resize(N);
        std::size_t next = 0;
        for (std::size_t pos = 0; pos < N; ++pos)
          trial.gallery[pos] = pos == trial.answer ? match : imposters[next++];
        set.match_trials.push_back(std::move(trial));
      }
    }
  }
  return set;
}

// Probe picks the gallery entry with the highest cosine similarity; ties go
// to the lowest gallery index. Trial scoring is parallel over trials with a
// serial reduction, so the result is identical for any thread count.
inline double match_accuracy(const EmbeddingTable& table, const TrialSet& trials,
                             int threads = 1) {
  if (trials.kind != TrialSet::Kind::match)
    throw std::invalid_argument("match_accuracy: needs a match trial set");
  if (trials.match_trials.empty()) return 0.0;
  std::vector<std::uint8_t> outcome(trials.match_trials.size());
  parallel_ranges(trials.match_trials.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const auto& trial = trials.match_trials[t];
      const auto& probe = table.rows[trial.probe].embedding;
      std::size_t best = 0;
      double best_score = cosine_similarity(probe, table.rows[trial.gallery[0]].embedding);
      for (std::size_t g = 1; g < trial.gallery.size(); ++g) {
        const double score = cosine_similarity(probe, table.rows[trial.gallery[g]].embedding);
        if (score > best_score) {
          best_score = score;
          best = g;
        }
      }
      outcome[t] = best == trial.answer;
    }
  });
  std::size_t correct = 0;
  for (std::uint8_t o : outcome) correct += o;
  return static_cast<double>(correct) / static_cast<double>(trials.match_trials.size());
}

// Splits every 1:2 trial into one positive and one negative pair, in trial
// order (positive first), so the output is exactly twice as large.
inline TrialSet build_verification_pairs(const TrialSet& match) {
  if (match.kind != TrialSet::Kind::match || match.N != 2)
    throw std::invalid_argument("build_verification_pairs: needs a 1:2 match trial set");
  TrialSet set;
  set.kind = TrialSet::Kind::verify;
  set.direction = match.direction;
  set.stratification = match.stratification;
  set.N = 2;
  set.skipped = match.skipped;
  set.pairs.reserve(match.match_trials.size() * 2);
  for (const auto& trial : match.match_trials) {
    set.pairs.push_back({trial.probe, trial.gallery[trial.answer], true});
    set.pairs.push_back({trial.probe, trial.gallery[1 - trial.answer], false});
  }
  return set;
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  // discrete-sweep granularity: the EER cannot be resolved finer than this
  double granularity = 0.0;
};

// Discrete threshold sweep over all distinct scores (accept iff score >=
// threshold, no ROC interpolation). Returns the threshold minimizing
// |F_R - F_A|, ties broken toward the lower threshold, and the EER as the
// mean of the two rates there.
inline EerResult eer(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("eer: size mismatch");
  std::size_t npos = 0, nneg = 0;
  for (auto l : labels) (l ? npos : nneg) += 1;
  if (npos == 0 || nneg == 0)
    throw std::invalid_argument("eer: need at least one positive and one negative");

  std::vector<std::pair<double, std::uint8_t>> sorted(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) sorted[i] = {scores[i], labels[i]};
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  EerResult best;
  double best_gap = 2.0;
  std::size_t pos_below = 0, neg_below = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double threshold = sorted[i].first;
    const double fr = static_cast<double>(pos_below) / static_cast<double>(npos);
    const double fa = static_cast<double>(nneg - neg_below) / static_cast<double>(nneg);
    const double gap = std::abs(fr - fa);
    if (gap < best_gap) {
      best_gap = gap;
      best.eer = 0.5 * (fr + fa);
      best.threshold = threshold;
    }
    while (i < sorted.size() && sorted[i].first == threshold) {
      (sorted[i].second ? pos_below : neg_below) += 1;
      ++i;
    }
  }
  best.granularity = 1.0 / static_cast<double>(std::min(npos, nneg));
  return best;
}

inline EerResult verification_eer(const EmbeddingTable& table, const TrialSet& pairs,
                                  int threads = 1) {
  if (pairs.kind != TrialSet::Kind::verify)
    throw std::invalid_argument("verification_eer: needs a verify trial set");
  std::vector<double> scores(pairs.pairs.size());
  std::vector<std::uint8_t> labels(pairs.pairs.size());
  parallel_ranges(pairs.pairs.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = pairs.pairs[i];
      scores[i] =
          cosine_similarity(table.rows[p.probe].embedding, table.rows[p.partner].embedding);
      labels[i] = p.positive ? 1 : 0;
    }
  });
  return eer(scores, labels);
}

struct RetrievalResult {
  double map = 0.0;
  std::size_t included = 0;  // queries with at least one relevant gallery item
  std::size_t excluded = 0;
};

// mAP with gallery ranked by descending cosine (ties by index). AP sums
// precision at each relevant rank in rank order; queries without relevant
// items are excluded and counted. Per-query APs land in fixed slots and are
// reduced in query order, so thread count cannot change the result.
inline RetrievalResult retrieval_map(const EmbeddingTable& table,
                                     std::span<const std::size_t> queries,
                                     std::span<const std::size_t> gallery,
                                     const std::string& relevance_covariate, int threads = 1) {
  if (gallery.empty()) throw std::invalid_argument("retrieval_map: empty gallery");
  const int cov = table.schema.index_of(relevance_covariate);
  const bool by_identity = cov < 0;
  if (by_identity && relevance_covariate != "identity")
    throw std::invalid_argument("retrieval_map: unknown covariate '" + relevance_covariate + "'");
  auto relevant = [&](const EmbeddingRow& q, const EmbeddingRow& g) {
    return by_identity ? q.id_index == g.id_index
                       : q.labels[static_cast<std::size_t>(cov)] ==
                             g.labels[static_cast<std::size_t>(cov)];
  };

  std::vector<double> ap_of(queries.size(), -1.0);  // -1 marks an excluded query
  parallel_ranges(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> order(gallery.size());
    std::vector<double> scores(gallery.size());
    for (std::size_t qi = begin; qi < end; ++qi) {
      const EmbeddingRow& qrow = table.rows[queries[qi]];
      std::size_t n_relevant = 0;
      for (std::size_t g : gallery)
        if (relevant(qrow, table.rows[g])) ++n_relevant;
      if (n_relevant == 0) continue;
      for (std::size_t j = 0; j < gallery.size(); ++j) {
        order[j] = j;
        scores[j] = cosine_similarity(qrow.embedding, table.rows[gallery[j]].embedding);
      }
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (scores[x] != scores[y]) return scores[x] > scores[y];
        return x < y;
      });
      double ap = 0.0;
      std::size_t hits = 0;
      for (std::size_t rank = 1; rank <= order.size(); ++rank) {
        if (relevant(qrow, table.rows[gallery[order[rank - 1]]])) {
          ++hits;
          ap += static_cast<double>(hits) / static_cast<double>(rank);
        }
      }
      ap_of[qi] = ap / static_cast<double>(n_relevant);
    }
  });

  RetrievalResult result;
  double ap_sum = 0.0;
  for (double ap : ap_of) {
    if (ap < 0.0) {
      ++result.excluded;
    } else {
      ap_sum += ap;
      ++result.included;
    }
  }
  if (result.included == 0)
    throw std::invalid_argument("retrieval_map: no query has relevant gallery items");
  result.map = ap_sum / static_cast<double>(result.included);
  return result;
}

struct CovariateAccuracy {
  double acc_a = 0.0, acc_b = 0.0;
  std::size_t total_a = 0, total_b = 0;
};

// Argmax over classifier logits in infer mode, ties to the lowest class.
inline CovariateAccuracy covariate_accuracy(const NetworkSpec& spec, const ParamStore& params,
                                            const Dataset& ds, std::size_t covariate_index) {
  if (covariate_index >= spec.schema.size())
    throw std::invalid_argument("covariate_accuracy: covariate index out of range");
  std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
  for (const auto& sample : ds.samples) {
    const Tensor emb = forward_embed(spec, params, sample, Mode::infer);
    const Tensor logits = classify(params, emb, covariate_index);
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.numel(); ++k)
      if (logits[k] > logits[best]) best = k;
    const int mod = static_cast<int>(sample.modality);
    ++total[mod];
    if (static_cast<int>(best) == sample.labels[covariate_index]) ++correct[mod];
  }
  CovariateAccuracy out;
  out.total_a = total[0];
  out.total_b = total[1];
  out.acc_a = total[0] ? static_cast<double>(correct[0]) / total[0] : 0.0;
  out.acc_b = total[1] ? static_cast<double>(correct[1]) / total[1] : 0.0;
  return out;
}

}  // namespace dimnet
