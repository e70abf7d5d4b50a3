#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "dimnet/data.hpp"
#include "dimnet/rng.hpp"
#include "dimnet/synthgen.hpp"

using namespace dimnet;

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    all_equal = all_equal && (x == b.next_u64());
    any_diff = any_diff || (x != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 16; ++s)
    for (std::uint64_t t = 0; t < 16; ++t) seeds.insert(derive_seed(s, t));
  CHECK(seeds.size() == 256);
}

TEST_CASE("rng below stays in range and covers values") {
  Rng rng(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("rng normal has roughly standard moments") {
  Rng rng(5);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("categorical respects degenerate weights") {
  Rng rng(9);
  const std::vector<double> w = {0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(rng.categorical(w) == 1);
}

static Dataset tiny_dataset() {
  Dataset ds;
  ds.schema.covariates = {{"identity", 2}, {"gender", 2}};
  ds.shapes = {{3}, {2}};
  ds.split_tag = SplitTag::test;
  Sample s0{Modality::A, 0, {0, 1}, Tensor({3}, {1.0, -2.5, 0.125})};
  Sample s1{Modality::B, 1, {1, 0}, Tensor({2}, {3.14159265358979312, 1e-300})};
  ds.samples = {s0, s1};
  return ds;
}

TEST_CASE("dimset round-trips byte for byte") {
  const Dataset ds = tiny_dataset();
  const std::string text = serialize_dataset(ds);
  std::istringstream in(text);
  const Dataset back = parse_dataset(in, "mem");
  CHECK(serialize_dataset(back) == text);
  CHECK(back.schema == ds.schema);
  CHECK(back.samples.size() == 2);
  CHECK(back.samples[1].features.data[0] == ds.samples[1].features.data[0]);
}

TEST_CASE("dimset parser rejects malformed input") {
  std::istringstream bad("NOTDIM 1 train 0 A 1 3 B 1 2 0\n");
  CHECK_THROWS_AS(parse_dataset(bad, "mem"), io_error);
  std::istringstream truncated("DIMSET 1 train 1 gender:2 A 1 3 B 1 2 1\n0 A 1 1.0\n");
  CHECK_THROWS_AS(parse_dataset(truncated, "mem"), io_error);
}

TEST_CASE("sample_population basic bounds") {
  CovariateSchema schema;
  schema.covariates = {{"gender", 2}};
  const auto pop = sample_population(schema, 4, 0.5, {}, 3, 7);
  REQUIRE(pop.identities.size() == 4);
  for (const auto& id : pop.identities) {
    CHECK((id.labels[0] == 0 || id.labels[0] == 1));
    CHECK(id.latent.size() == 3);
  }
}

TEST_CASE("degenerate nationality weights pin every identity") {
  CovariateSchema schema;
  schema.covariates = {{"nationality", 4}};
  const auto pop = sample_population(schema, 50, 0.5, {1.0, 0.0, 0.0, 0.0}, 2, 3);
  for (const auto& id : pop.identities) CHECK(id.labels[0] == 0);
}

TEST_CASE("gender counts stay within the binomial 4-sigma band") {
  // n=10000, p=0.5: mean 5000, sigma 50, 4 sigma = 200
  CovariateSchema schema;
  schema.covariates = {{"gender", 2}};
  const auto pop = sample_population(schema, 10000, 0.5, {}, 2, 1);
  int zeros = 0;
  for (const auto& id : pop.identities) zeros += id.labels[0] == 0;
  CHECK(zeros >= 4800);
  CHECK(zeros <= 5200);
}

TEST_CASE("schema validation rejects bad covariates") {
  CovariateSchema schema;
  schema.covariates = {{"gender", 2}, {"gender", 3}};
  CHECK_THROWS_AS(schema.validate(), std::invalid_argument);
  schema.covariates = {{"a b", 2}};
  CHECK_THROWS_AS(schema.validate(), std::invalid_argument);
  schema.covariates = {{"ok", 1}};
  CHECK_THROWS_AS(schema.validate(), std::invalid_argument);
}

TEST_CASE("sample_population validates input") {
  CovariateSchema schema;
  schema.covariates = {{"gender", 2}, {"nationality", 3}};
  CHECK_THROWS_AS(sample_population(schema, 1, 0.5, {0.5, 0.25, 0.25}, 2, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_population(schema, 10, 0.5, {0.5, 0.25, 0.3}, 2, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_population(schema, 10, 0.5, {0.5, 0.5}, 2, 0), std::invalid_argument);
}

TEST_CASE("identity covariate equals id_index") {
  CovariateSchema schema;
  schema.covariates = {{"identity", 12}, {"gender", 2}};
  const auto pop = sample_population(schema, 12, 0.5, {}, 2, 11);
  for (const auto& id : pop.identities) CHECK(id.labels[0] == id.id_index);
}

namespace {

struct GenFixture {
  CovariateSchema schema;
  PopulationTable pop;
  ModalityMaps maps;

  GenFixture() {
    schema.covariates = {{"identity", 3}, {"gender", 2}};
    pop = sample_population(schema, 3, 0.5, {}, 4, 21);
    maps = make_modality_maps(schema, 4, {{5}, {6}}, 21);
  }
};

}  // namespace

TEST_CASE("noiseless generation is constant per identity") {
  GenFixture f;
  const auto ds = generate_samples(f.pop, {2, 1}, f.maps, 0.0, {1.0, 1.0}, 3);
  REQUIRE(ds.samples.size() == 9);
  // first two samples are the A-samples of identity 0
  CHECK(ds.samples[0].features.data == ds.samples[1].features.data);
}

TEST_CASE("zero signal makes equal-latent identities indistinguishable") {
  GenFixture f;
  f.pop.identities[1].latent = f.pop.identities[0].latent;
  const auto ds = generate_samples(f.pop, {1, 0}, f.maps, 0.0, {0.0, 0.0}, 3);
  CHECK(ds.samples[0].features.data == ds.samples[1].features.data);
}

TEST_CASE("generation is bit-identical per seed") {
  GenFixture f;
  const auto d1 = generate_samples(f.pop, {2, 2}, f.maps, 0.5, {1.0, 2.0}, 3);
  const auto d2 = generate_samples(f.pop, {2, 2}, f.maps, 0.5, {1.0, 2.0}, 3);
  CHECK(serialize_dataset(d1) == serialize_dataset(d2));
  const auto d3 = generate_samples(f.pop, {2, 2}, f.maps, 0.5, {1.0, 2.0}, 4);
  CHECK(serialize_dataset(d1) != serialize_dataset(d3));
}

TEST_CASE("generate_samples rejects mismatched maps") {
  GenFixture f;
  CovariateSchema other;
  other.covariates = {{"identity", 3}, {"gender", 2}, {"extra", 5}};
  const auto wrong_maps = make_modality_maps(other, 4, {{5}, {6}}, 21);
  CHECK_THROWS_AS(generate_samples(f.pop, {1, 1}, wrong_maps, 0.0, {1.0, 1.0}, 3),
                  std::invalid_argument);
}

TEST_CASE("labels agree with the population table") {
  GenFixture f;
  const auto ds = generate_samples(f.pop, {2, 3}, f.maps, 1.0, {1.0, 1.0}, 9);
  for (const auto& s : ds.samples)
    CHECK(s.labels == f.pop.identities[static_cast<std::size_t>(s.id_index)].labels);
}

static Dataset many_id_dataset(int n_ids) {
  CovariateSchema schema;
  schema.covariates = {{"identity", n_ids}, {"gender", 2}};
  const auto pop = sample_population(schema, n_ids, 0.5, {}, 2, 77);
  const auto maps = make_modality_maps(schema, 2, {{4}, {4}}, 77);
  return generate_samples(pop, {2, 2}, maps, 0.1, {1.0, 1.0}, 77);
}

TEST_CASE("split assigns 8/1/1 identities for ten ids") {
  const auto ds = many_id_dataset(10);
  const auto splits = split_by_identity(ds, {0.8, 0.1, 0.1}, 5);
  CHECK(splits.train.identity_set().size() == 8);
  CHECK(splits.val.identity_set().size() == 1);
  CHECK(splits.test.identity_set().size() == 1);
  CHECK(splits.train.split_tag == SplitTag::train);
  CHECK(splits.test.split_tag == SplitTag::test);
}

TEST_CASE("degenerate ratios put everything in train") {
  const auto ds = many_id_dataset(10);
  const auto splits = split_by_identity(ds, {1.0, 0.0, 0.0}, 5);
  CHECK(splits.train.samples.size() == ds.samples.size());
  CHECK(splits.val.samples.empty());
  CHECK(splits.test.samples.empty());
}

TEST_CASE("splits partition the samples and keep identities disjoint") {
  const auto ds = many_id_dataset(13);
  const auto splits = split_by_identity(ds, {0.6, 0.2, 0.2}, 3);
  CHECK(splits.train.samples.size() + splits.val.samples.size() + splits.test.samples.size() ==
        ds.samples.size());
  std::set<int> train_ids, val_ids, test_ids;
  for (const auto& s : splits.train.samples) train_ids.insert(s.id_index);
  for (const auto& s : splits.val.samples) val_ids.insert(s.id_index);
  for (const auto& s : splits.test.samples) test_ids.insert(s.id_index);
  for (int id : val_ids) {
    CHECK(!train_ids.count(id));
    CHECK(!test_ids.count(id));
  }
  for (int id : test_ids) CHECK(!train_ids.count(id));
  // every sample assigned exactly once: per-id counts preserved
  std::map<int, int> count_before, count_after;
  for (const auto& s : ds.samples) ++count_before[s.id_index];
  for (const auto* part : {&splits.train, &splits.val, &splits.test})
    for (const auto& s : part->samples) ++count_after[s.id_index];
  CHECK(count_before == count_after);
}

TEST_CASE("split needs enough identities") {
  const auto ds = many_id_dataset(2);
  CHECK_THROWS_AS(split_by_identity(ds, {0.4, 0.3, 0.3}, 1), std::invalid_argument);
}

TEST_CASE("split is deterministic per seed") {
  const auto ds = many_id_dataset(12);
  const auto s1 = split_by_identity(ds, {0.5, 0.25, 0.25}, 17);
  const auto s2 = split_by_identity(ds, {0.5, 0.25, 0.25}, 17);
  CHECK(serialize_dataset(s1.train) == serialize_dataset(s2.train));
  CHECK(serialize_dataset(s1.test) == serialize_dataset(s2.test));
}
