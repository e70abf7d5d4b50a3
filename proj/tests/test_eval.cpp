#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "dimnet/eval.hpp"
#include "dimnet/mds.hpp"
#include "dimnet/rng.hpp"
#include "dimnet/synthgen.hpp"

using namespace dimnet;

namespace {

// Hand-rolled table construction so trials can be scored against embeddings
// chosen directly by the test.
struct TableBuilder {
  CovariateSchema schema;
  Dataset ds;
  EmbeddingTable table;

  explicit TableBuilder(CovariateSchema s) : schema(std::move(s)) {
    ds.schema = schema;
    table.schema = schema;
  }

  std::size_t add(Modality m, int id, LabelVector labels, std::vector<double> embedding) {
    Sample sample;
    sample.modality = m;
    sample.id_index = id;
    sample.labels = labels;
    sample.features = Tensor({embedding.size()}, embedding);
    ds.shapes = {{embedding.size()}, {embedding.size()}};
    ds.samples.push_back(sample);
    EmbeddingRow row;
    row.sample_index = table.rows.size();
    row.modality = m;
    row.id_index = id;
    row.labels = std::move(labels);
    row.embedding = std::move(embedding);
    table.rows.push_back(row);
    table.dim = table.rows.back().embedding.size();
    return table.rows.size() - 1;
  }
};

CovariateSchema gid_schema(int n_ids) {
  CovariateSchema s;
  s.covariates = {{"identity", n_ids}, {"gender", 2}, {"nationality", 3}};
  return s;
}

std::vector<double> one_hot(std::size_t dim, std::size_t index, double value = 1.0) {
  std::vector<double> v(dim, 0.0);
  v[index] = value;
  return v;
}

}  // namespace

TEST_CASE("two identities with one sample per modality give one trial each") {
  TableBuilder tb(gid_schema(2));
  tb.add(Modality::A, 0, {0, 0, 0}, one_hot(4, 0));
  tb.add(Modality::B, 0, {0, 0, 0}, one_hot(4, 0));
  tb.add(Modality::A, 1, {1, 1, 1}, one_hot(4, 1));
  tb.add(Modality::B, 1, {1, 1, 1}, one_hot(4, 1));
  for (Direction dir : {Direction::A2B, Direction::B2A}) {
    const auto trials = build_match_trials(tb.ds, dir, 2, Stratification::U, 3);
    CHECK(trials.match_trials.size() == 2);  // one per identity
    std::map<int, int> per_id;
    for (const auto& t : trials.match_trials) ++per_id[tb.table.rows[t.probe].id_index];
    CHECK(per_id[0] == 1);
    CHECK(per_id[1] == 1);
    CHECK(trials.skipped == 0);
  }
  CHECK(match_accuracy(tb.table, build_match_trials(tb.ds, Direction::A2B, 2,
                                                    Stratification::U, 3)) == 1.0);
}

TEST_CASE("trial count is the exhaustive positive-pair count") {
  // identity i holds (i+1) A-samples and 2 B-samples: p_a * p_b trials each
  TableBuilder tb(gid_schema(4));
  Rng rng(5);
  for (int id = 0; id < 4; ++id) {
    LabelVector labels = {id, id % 2, id % 3};
    for (int k = 0; k <= id; ++k) {
      std::vector<double> e(4);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::A, id, labels, e);
    }
    for (int k = 0; k < 2; ++k) {
      std::vector<double> e(4);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::B, id, labels, e);
    }
  }
  const auto trials = build_match_trials(tb.ds, Direction::A2B, 2, Stratification::U, 9);
  CHECK(trials.match_trials.size() == (1 + 2 + 3 + 4) * 2);
  std::map<int, int> per_id;
  for (const auto& t : trials.match_trials) ++per_id[tb.table.rows[t.probe].id_index];
  for (int id = 0; id < 4; ++id) CHECK(per_id[id] == (id + 1) * 2);
  const auto reversed = build_match_trials(tb.ds, Direction::B2A, 2, Stratification::U, 9);
  CHECK(reversed.match_trials.size() == trials.match_trials.size());
}

TEST_CASE("stratified galleries share the probe's covariate values") {
  TableBuilder tb(gid_schema(24));
  Rng rng(7);
  for (int id = 0; id < 24; ++id) {
    LabelVector labels = {id, id % 2, id % 3};
    for (int k = 0; k < 2; ++k) {
      std::vector<double> e(4);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::A, id, labels, e);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::B, id, labels, e);
    }
  }
  for (auto strat : {Stratification::G, Stratification::N, Stratification::GN}) {
    const auto trials = build_match_trials(tb.ds, Direction::A2B, 3, strat, 11);
    CHECK(trials.match_trials.size() > 0);
    for (const auto& t : trials.match_trials) {
      const auto& probe = tb.table.rows[t.probe];
      for (auto g : t.gallery) {
        const auto& row = tb.table.rows[g];
        CHECK(row.modality == Modality::B);
        if (strat == Stratification::G || strat == Stratification::GN)
          CHECK(row.labels[1] == probe.labels[1]);
        if (strat == Stratification::N || strat == Stratification::GN)
          CHECK(row.labels[2] == probe.labels[2]);
      }
      // exactly one gallery entry shares the probe identity, at `answer`
      std::size_t matches = 0;
      for (std::size_t pos = 0; pos < t.gallery.size(); ++pos)
        if (tb.table.rows[t.gallery[pos]].id_index == probe.id_index) {
          ++matches;
          CHECK(pos == t.answer);
        }
      CHECK(matches == 1);
    }
  }
}

TEST_CASE("too-small strata skip trials and report the count") {
  // nationality 2 is held by a single identity: N-stratified trials for it
  // have no imposters
  TableBuilder tb(gid_schema(3));
  tb.add(Modality::A, 0, {0, 0, 0}, one_hot(4, 0));
  tb.add(Modality::B, 0, {0, 0, 0}, one_hot(4, 1));
  tb.add(Modality::A, 1, {1, 1, 0}, one_hot(4, 2));
  tb.add(Modality::B, 1, {1, 1, 0}, one_hot(4, 3));
  tb.add(Modality::A, 2, {2, 0, 2}, one_hot(4, 0, 2.0));
  tb.add(Modality::B, 2, {2, 0, 2}, one_hot(4, 1, 2.0));
  const auto trials = build_match_trials(tb.ds, Direction::A2B, 2, Stratification::N, 1);
  CHECK(trials.match_trials.size() == 2);
  CHECK(trials.skipped == 1);
}

TEST_CASE("build_match_trials is deterministic per seed and needs known strata") {
  TableBuilder tb(gid_schema(6));
  Rng rng(3);
  for (int id = 0; id < 6; ++id) {
    std::vector<double> e(4);
    for (auto& v : e) v = rng.normal();
    tb.add(Modality::A, id, {id, id % 2, id % 3}, e);
    tb.add(Modality::B, id, {id, id % 2, id % 3}, e);
  }
  const auto t1 = build_match_trials(tb.ds, Direction::A2B, 3, Stratification::U, 5);
  const auto t2 = build_match_trials(tb.ds, Direction::A2B, 3, Stratification::U, 5);
  REQUIRE(t1.match_trials.size() == t2.match_trials.size());
  for (std::size_t i = 0; i < t1.match_trials.size(); ++i) {
    CHECK(t1.match_trials[i].gallery == t2.match_trials[i].gallery);
    CHECK(t1.match_trials[i].answer == t2.match_trials[i].answer);
  }
  CHECK_THROWS_AS(build_match_trials(tb.ds, Direction::A2B, 1, Stratification::U, 5),
                  std::invalid_argument);
  Dataset no_gender = tb.ds;
  no_gender.schema.covariates[1].name = "g";
  CHECK_THROWS_AS(build_match_trials(no_gender, Direction::A2B, 2, Stratification::G, 5),
                  std::invalid_argument);
}

TEST_CASE("all-equal embeddings score 1/N within 4 sigma") {
  // ties resolve to gallery index 0; the answer position is uniform
  const int n_ids = 12, per_mod = 30;
  TableBuilder tb(gid_schema(n_ids));
  for (int id = 0; id < n_ids; ++id)
    for (int k = 0; k < per_mod; ++k) {
      tb.add(Modality::A, id, {id, id % 2, id % 3}, {1.0, 1.0, 1.0});
      tb.add(Modality::B, id, {id, id % 2, id % 3}, {1.0, 1.0, 1.0});
    }
  const std::size_t N = 4;
  const auto trials = build_match_trials(tb.ds, Direction::A2B, N, Stratification::U, 17);
  REQUIRE(trials.match_trials.size() == static_cast<std::size_t>(n_ids) * per_mod * per_mod);
  const double acc = match_accuracy(tb.table, trials);
  const double p = 1.0 / static_cast<double>(N);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(trials.match_trials.size()));
  CHECK(std::abs(acc - p) < 4.0 * sigma);
}

TEST_CASE("a gallery clone of the probe embedding always wins") {
  TableBuilder tb(gid_schema(2));
  const auto probe = tb.add(Modality::A, 0, {0, 0, 0}, {0.3, -0.7, 0.2});
  const auto match = tb.add(Modality::B, 0, {0, 0, 0}, {0.3, -0.7, 0.2});
  const auto imp = tb.add(Modality::B, 1, {1, 1, 1}, {0.5, 0.5, 0.5});
  TrialSet set;
  set.kind = TrialSet::Kind::match;
  set.N = 2;
  set.match_trials.push_back({probe, {imp, match}, 1});
  CHECK(match_accuracy(tb.table, set) == 1.0);
}

TEST_CASE("match accuracy is invariant under positive rescaling") {
  TableBuilder tb(gid_schema(8));
  Rng rng(19);
  for (int id = 0; id < 8; ++id)
    for (int k = 0; k < 3; ++k) {
      std::vector<double> e(5);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::A, id, {id, id % 2, id % 3}, e);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::B, id, {id, id % 2, id % 3}, e);
    }
  const auto trials = build_match_trials(tb.ds, Direction::A2B, 4, Stratification::U, 23);
  const double before = match_accuracy(tb.table, trials);
  EmbeddingTable scaled = tb.table;
  for (auto& row : scaled.rows) {
    const double factor = 0.01 + rng.next_double() * 50.0;
    for (auto& v : row.embedding) v *= factor;
  }
  CHECK(match_accuracy(scaled, trials) == before);
}

TEST_CASE("verification pairs double the 1:2 trials") {
  TableBuilder tb(gid_schema(5));
  Rng rng(29);
  for (int id = 0; id < 5; ++id)
    for (int k = 0; k < 2; ++k) {
      std::vector<double> e(4);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::A, id, {id, id % 2, id % 3}, e);
      for (auto& v : e) v = rng.normal();
      tb.add(Modality::B, id, {id, id % 2, id % 3}, e);
    }
  const auto trials = build_match_trials(tb.ds, Direction::A2B, 2, Stratification::G, 31);
  const auto pairs = build_verification_pairs(trials);
  CHECK(pairs.kind == TrialSet::Kind::verify);
  CHECK(pairs.stratification == Stratification::G);
  REQUIRE(pairs.pairs.size() == 2 * trials.match_trials.size());
  std::size_t positives = 0;
  for (const auto& p : pairs.pairs) {
    const bool same_id = tb.table.rows[p.probe].id_index == tb.table.rows[p.partner].id_index;
    CHECK(same_id == p.positive);
    positives += p.positive;
  }
  CHECK(positives == trials.match_trials.size());
  const auto trialsN = build_match_trials(tb.ds, Direction::A2B, 3, Stratification::U, 31);
  CHECK_THROWS_AS(build_verification_pairs(trialsN), std::invalid_argument);
}

// independent threshold-sweep oracle: every distinct score, accept iff >=
static EerResult eer_brute_force(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& labels) {
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::size_t npos = 0, nneg = 0;
  for (auto l : labels) (l ? npos : nneg) += 1;
  EerResult best;
  double best_gap = 2.0;
  for (const double t : thresholds) {
    std::size_t fr_count = 0, fa_count = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] && scores[i] < t) ++fr_count;
      if (!labels[i] && scores[i] >= t) ++fa_count;
    }
    const double fr = static_cast<double>(fr_count) / static_cast<double>(npos);
    const double fa = static_cast<double>(fa_count) / static_cast<double>(nneg);
    if (std::abs(fr - fa) < best_gap) {
      best_gap = std::abs(fr - fa);
      best.eer = 0.5 * (fr + fa);
      best.threshold = t;
    }
  }
  best.granularity = 1.0 / static_cast<double>(std::min(npos, nneg));
  return best;
}

TEST_CASE("eer closed cases") {
  const std::vector<double> sep = {0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> pos_first = {1, 1, 0, 0};
  CHECK(eer(sep, pos_first).eer == 0.0);
  const std::vector<std::uint8_t> inverted = {0, 0, 1, 1};
  CHECK(eer(sep, inverted).eer == 1.0);

  // mixed case, frozen from the brute-force sweep: best |F_R-F_A| at
  // threshold 0.6 where both rates are 1/2
  const std::vector<double> mixed = {0.9, 0.4, 0.6, 0.1};
  const auto r = eer(mixed, pos_first);
  const auto oracle = eer_brute_force(mixed, pos_first);
  CHECK(r.eer == oracle.eer);
  CHECK(r.threshold == oracle.threshold);
  CHECK(r.eer == 0.5);
  CHECK(r.threshold == 0.6);
  CHECK(r.granularity == 0.5);

  const std::vector<double> one_class = {0.5, 0.6};
  const std::vector<std::uint8_t> all_pos = {1, 1};
  CHECK_THROWS_AS(eer(one_class, all_pos), std::invalid_argument);
}

TEST_CASE("eer equals the brute-force sweep on random instances") {
  Rng rng(37);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 2 + rng.below(18);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.below(8) / 4.0 - 1.0;  // coarse grid forces ties
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    const auto fast = eer(scores, labels);
    const auto slow = eer_brute_force(scores, labels);
    REQUIRE(fast.eer == slow.eer);
    REQUIRE(fast.threshold == slow.threshold);
    CHECK(fast.eer >= 0.0);
    CHECK(fast.eer <= 1.0);
  }
}

TEST_CASE("retrieval AP closed cases") {
  TableBuilder tb(gid_schema(6));
  // query: identity 0; gallery of 5 with controlled scores
  const auto q = tb.add(Modality::A, 0, {0, 0, 0}, {1.0, 0.0});
  std::vector<std::size_t> gallery;
  auto add_gallery = [&](int id, double score) {
    // cosine with (1,0) equals score for unit vectors (score, sqrt(1-s^2))
    gallery.push_back(
        tb.add(Modality::B, id, {id, id % 2, id % 3}, {score, std::sqrt(1.0 - score * score)}));
  };

  SECTION("single relevant item at rank 1") {
    add_gallery(0, 0.9);
    for (int i = 1; i < 5; ++i) add_gallery(i, 0.5 - 0.1 * i);
    const auto r = retrieval_map(tb.table, std::vector<std::size_t>{q}, gallery, "identity");
    CHECK(r.map == 1.0);
    CHECK(r.included == 1);
  }
  SECTION("single relevant item at rank 2") {
    add_gallery(1, 0.9);
    add_gallery(0, 0.8);
    add_gallery(2, 0.1);
    const auto r = retrieval_map(tb.table, std::vector<std::size_t>{q}, gallery, "identity");
    CHECK(r.map == 0.5);
  }
  SECTION("two relevant items at ranks 1 and 3") {
    add_gallery(0, 0.9);
    add_gallery(1, 0.8);
    add_gallery(0, 0.7);
    add_gallery(2, 0.1);
    const auto r = retrieval_map(tb.table, std::vector<std::size_t>{q}, gallery, "identity");
    CHECK_THAT(r.map, Catch::Matchers::WithinAbs((1.0 + 2.0 / 3.0) / 2.0, 1e-15));
  }
  SECTION("queries without relevant items are excluded and counted") {
    add_gallery(1, 0.9);
    add_gallery(2, 0.8);
    const auto no_rel = retrieval_map(tb.table, std::vector<std::size_t>{q}, gallery, "gender");
    CHECK(no_rel.included == 1);  // gender 0 matches id 2 (2 % 2 == 0)
    CHECK_THROWS_AS(retrieval_map(tb.table, std::vector<std::size_t>{q}, gallery, "unknown_cov"),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        retrieval_map(tb.table, std::vector<std::size_t>{q}, std::vector<std::size_t>{}, "gender"),
        std::invalid_argument);
  }
}

// independent mAP recomputation with the same tie rule and summation order
static double map_brute_force(const EmbeddingTable& table, const std::vector<std::size_t>& queries,
                              const std::vector<std::size_t>& gallery, int cov) {
  double ap_sum = 0.0;
  std::size_t included = 0;
  for (std::size_t q : queries) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t j = 0; j < gallery.size(); ++j)
      ranked.push_back(
          {cosine_similarity(table.rows[q].embedding, table.rows[gallery[j]].embedding), j});
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    std::size_t n_rel = 0;
    for (std::size_t j : gallery)
      n_rel += table.rows[q].labels[cov] == table.rows[j].labels[cov];
    if (n_rel == 0) continue;
    ++included;
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 1; rank <= ranked.size(); ++rank) {
      const auto& row = table.rows[gallery[ranked[rank - 1].second]];
      if (table.rows[q].labels[cov] == row.labels[cov]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    ap_sum += ap / static_cast<double>(n_rel);
  }
  return ap_sum / static_cast<double>(included);
}

TEST_CASE("mAP equals brute-force recomputation on random small instances") {
  Rng rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    TableBuilder tb(gid_schema(5));
    std::vector<std::size_t> queries, gallery;
    const std::size_t nq = 1 + rng.below(4), ng = 2 + rng.below(18);
    for (std::size_t i = 0; i < nq; ++i) {
      const int id = static_cast<int>(rng.below(5));
      std::vector<double> e(3);
      for (auto& v : e) v = rng.normal();
      queries.push_back(tb.add(Modality::A, id, {id, id % 2, id % 3}, e));
    }
    for (std::size_t i = 0; i < ng; ++i) {
      const int id = static_cast<int>(rng.below(5));
      std::vector<double> e(3);
      for (auto& v : e) v = rng.normal();
      gallery.push_back(tb.add(Modality::B, id, {id, id % 2, id % 3}, e));
    }
    bool any_relevant = false;
    for (std::size_t q : queries)
      for (std::size_t g : gallery)
        any_relevant = any_relevant || tb.table.rows[q].labels[1] == tb.table.rows[g].labels[1];
    if (!any_relevant) {
      CHECK_THROWS_AS(retrieval_map(tb.table, queries, gallery, "gender"), std::invalid_argument);
      continue;
    }
    const auto fast = retrieval_map(tb.table, queries, gallery, "gender");
    REQUIRE(fast.map == map_brute_force(tb.table, queries, gallery, 1));
  }
}

TEST_CASE("covariate accuracy closed cases") {
  // embedding = features (identity dense layer); head picks the embedding's
  // argmax, which encodes the gender label
  NetworkSpec spec;
  spec.schema.covariates = {{"gender", 2}};
  spec.input_shapes = {{2}, {2}};
  spec.branch_a = {LayerSpec::dense(2)};
  spec.branch_b = {LayerSpec::dense(2)};
  spec.embedding_dim = 2;
  ParamStore params = init_params(spec, 3);
  for (auto* branch : {&params.branch_a, &params.branch_b}) {
    auto& l = (*branch)[0];
    std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
    l.weight.data[0] = 1.0;
    l.weight.data[3] = 1.0;
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
  Dataset ds;
  ds.schema = spec.schema;
  ds.shapes = spec.input_shapes;
  for (int i = 0; i < 10; ++i) {
    Sample s;
    s.modality = i % 2 ? Modality::A : Modality::B;
    s.id_index = i;
    const int gender = i < 6 ? 0 : 1;
    s.labels = {gender};
    s.features = Tensor({2});
    s.features.data[static_cast<std::size_t>(gender)] = 2.0;
    ds.samples.push_back(s);
  }
  auto& head = params.heads[0];
  std::fill(head.weight.data.begin(), head.weight.data.end(), 0.0);
  head.weight.data[0] = 1.0;  // logits = embedding
  head.weight.data[3] = 1.0;
  std::fill(head.bias.data.begin(), head.bias.data.end(), 0.0);
  const auto perfect = covariate_accuracy(spec, params, ds, 0);
  CHECK(perfect.acc_a == 1.0);
  CHECK(perfect.acc_b == 1.0);

  // constant logits: argmax ties to class 0, so accuracy = class-0 share
  std::fill(head.weight.data.begin(), head.weight.data.end(), 0.0);
  const auto constant = covariate_accuracy(spec, params, ds, 0);
  CHECK(constant.acc_a == 0.6);
  CHECK(constant.acc_b == 0.6);
  CHECK(constant.total_a == 5);
  CHECK_THROWS_AS(covariate_accuracy(spec, params, ds, 2), std::invalid_argument);
}

TEST_CASE("covariate accuracy matches a brute-force recount") {
  CovariateSchema schema;
  schema.covariates = {{"identity", 8}, {"gender", 2}};
  const auto pop = sample_population(schema, 8, 0.5, {}, 3, 61);
  const auto maps = make_modality_maps(schema, 3, {{6}, {6}}, 61);
  const auto ds = generate_samples(pop, {3, 3}, maps, 0.4, {1.0, 2.0}, 61);
  const auto spec = mlp_spec(schema, ds.shapes, {8}, 5);
  const auto params = init_params(spec, 71);
  for (std::size_t cov = 0; cov < 2; ++cov) {
    const auto fast = covariate_accuracy(spec, params, ds, cov);
    std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
    for (const auto& s : ds.samples) {
      const auto logits = classify(params, forward_embed(spec, params, s, Mode::infer), cov);
      std::size_t best = 0;
      for (std::size_t k = 1; k < logits.numel(); ++k)
        if (logits[k] > logits[best]) best = k;
      ++total[static_cast<int>(s.modality)];
      correct[static_cast<int>(s.modality)] += static_cast<int>(best) == s.labels[cov];
    }
    CHECK(fast.acc_a == static_cast<double>(correct[0]) / total[0]);
    CHECK(fast.acc_b == static_cast<double>(correct[1]) / total[1]);
  }
}

TEST_CASE("threaded evaluation is bit-identical to serial") {
  CovariateSchema schema;
  schema.covariates = {{"identity", 10}, {"gender", 2}};
  const auto pop = sample_population(schema, 10, 0.5, {}, 3, 81);
  const auto maps = make_modality_maps(schema, 3, {{6}, {6}}, 81);
  const auto ds = generate_samples(pop, {3, 3}, maps, 0.3, {1.0, 2.0}, 81);
  const auto spec = mlp_spec(schema, ds.shapes, {8}, 5);
  const auto params = init_params(spec, 91);
  const auto t1 = embed_all(spec, params, ds, 1);
  const auto t4 = embed_all(spec, params, ds, 4);
  for (std::size_t i = 0; i < t1.rows.size(); ++i)
    REQUIRE(t1.rows[i].embedding == t4.rows[i].embedding);

  const auto trials = build_match_trials(ds, Direction::A2B, 3, Stratification::U, 5);
  CHECK(match_accuracy(t1, trials, 1) == match_accuracy(t1, trials, 4));
  const auto two = build_match_trials(ds, Direction::A2B, 2, Stratification::U, 5);
  const auto pairs = build_verification_pairs(two);
  CHECK(verification_eer(t1, pairs, 1).eer == verification_eer(t1, pairs, 4).eer);
  std::vector<std::size_t> queries, gallery;
  for (std::size_t i = 0; i < t1.rows.size(); ++i)
    (t1.rows[i].modality == Modality::A ? queries : gallery).push_back(i);
  CHECK(retrieval_map(t1, queries, gallery, "gender", 1).map ==
        retrieval_map(t1, queries, gallery, "gender", 4).map);
}

TEST_CASE("embed_all maps datasets row by row") {
  CovariateSchema schema;
  schema.covariates = {{"identity", 6}, {"gender", 2}};
  const auto pop = sample_population(schema, 6, 0.5, {}, 3, 51);
  const auto maps = make_modality_maps(schema, 3, {{5}, {5}}, 51);
  const auto ds = generate_samples(pop, {2, 2}, maps, 0.2, {1.0, 1.0}, 51);
  const auto spec = mlp_spec(schema, ds.shapes, {6}, 4);
  const auto params = init_params(spec, 5);
  const auto table = embed_all(spec, params, ds);
  CHECK(table.rows.size() == ds.samples.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    CHECK(table.rows[i].sample_index == i);
    CHECK(table.rows[i].embedding.size() == 4);
  }
  const auto table2 = embed_all(spec, params, ds);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    CHECK(table.rows[i].embedding == table2.rows[i].embedding);

  Dataset empty;
  empty.schema = schema;
  empty.shapes = ds.shapes;
  CHECK(embed_all(spec, params, empty).rows.empty());
}
