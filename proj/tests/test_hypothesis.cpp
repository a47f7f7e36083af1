#include <catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <set>

#include "iclhcg/hypothesis.hpp"

using namespace iclhcg;

namespace {

// Pascal's triangle, independent of the multiplicative formula under test.
std::uint64_t pascal(std::uint64_t p, std::uint64_t m) {
  std::vector<std::vector<std::uint64_t>> c(p + 1, std::vector<std::uint64_t>(p + 1, 0));
  for (std::uint64_t i = 0; i <= p; ++i) {
    c[i][0] = 1;
    for (std::uint64_t j = 1; j <= i; ++j) c[i][j] = c[i - 1][j - 1] + c[i - 1][j];
  }
  return c[p][m];
}

HypothesisClass random_class(int n, std::size_t m, CounterRng& rng) {
  auto ids = enumerate_universe(n).ids();
  rng.shuffle(std::span<HypothesisId>(ids));
  ids.resize(m);
  return HypothesisClass(n, ids);
}

// Minimum teaching-set size by scanning every input mask.
int brute_teaching_size(const HypothesisClass& cls, HypothesisId h) {
  const int n = cls.n();
  int best = n + 1;
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    bool isolates = true;
    for (auto g : cls.members()) {
      if (g != h && ((g ^ h) & mask) == 0) isolates = false;
    }
    if (isolates) best = std::min(best, std::popcount(mask));
  }
  return best;
}

std::set<std::vector<HypothesisId>> as_set(const std::vector<HypothesisClass>& classes) {
  std::set<std::vector<HypothesisId>> out;
  for (const auto& c : classes) out.insert(c.sorted_members());
  return out;
}

}  // namespace

TEST_CASE("count_classes agrees with Pascal's triangle", "[hypothesis]") {
  for (std::uint64_t p = 0; p <= 40; ++p) {
    for (std::uint64_t m = 0; m <= p; ++m) REQUIRE(count_classes(p, m) == pascal(p, m));
  }
  CHECK(count_classes(16, 8) == 12870);
  CHECK_THROWS_AS(count_classes(4, 5), BoundsError);
  CHECK_THROWS_AS(count_classes(200, 100), BoundsError);
}

TEST_CASE("universe bounds", "[hypothesis]") {
  CHECK(enumerate_universe(5).size() == 32);
  CHECK_THROWS_AS(enumerate_universe(0), BoundsError);
  CHECK_THROWS_AS(enumerate_universe(kMaxInputSize + 1), BoundsError);
  CHECK_THROWS_AS(HypothesisClass(3, {1, 1}), BoundsError);
  CHECK_THROWS_AS(HypothesisClass(3, {8}), BoundsError);
  CHECK_THROWS_AS(HypothesisClass(3, {}), BoundsError);
}

TEST_CASE("pools are disjoint, sorted and of the requested sizes", "[hypothesis][property]") {
  CounterRng gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(8));
    const auto universe = enumerate_universe(n);
    const auto a = gen.below(universe.size() + 1);
    const auto b = gen.below(universe.size() - a + 1);
    const auto split = split_pools(universe, a, b, gen.split(trial));
    REQUIRE(split.id_pool.size() == a);
    REQUIRE(split.ood_pool.size() == b);
    REQUIRE(std::is_sorted(split.id_pool.begin(), split.id_pool.end()));
    std::vector<HypothesisId> both;
    std::set_intersection(split.id_pool.begin(), split.id_pool.end(), split.ood_pool.begin(),
                          split.ood_pool.end(), std::back_inserter(both));
    REQUIRE(both.empty());
  }
  CHECK_THROWS_AS(split_pools(enumerate_universe(3), 5, 4, CounterRng(0)), BoundsError);
}

TEST_CASE("class sets are distinct, within the pool and respect exclusions", "[hypothesis][property]") {
  CounterRng gen(2);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 3 + static_cast<int>(gen.below(3));
    const auto pool_split = split_pools(enumerate_universe(n), std::uint64_t{1} << (n - 1), 0, gen.split(trial));
    const auto& pool = pool_split.id_pool;
    const std::vector<int> sizes{2, 3};
    const auto possible = count_classes(pool.size(), 2) + count_classes(pool.size(), 3);
    const auto train = static_cast<std::size_t>(gen.below(std::min<std::uint64_t>(possible, 20)));
    const auto test = static_cast<std::size_t>(gen.below(std::min<std::uint64_t>(possible - train, 20) + 1));
    // Alternate between exhaustive enumeration and rejection sampling.
    const std::uint64_t cap = trial % 2 ? 0 : kClassEnumerationCap;
    const auto sets = build_class_sets(n, pool, sizes, train, test, gen.split(1000 + trial), {}, cap);
    REQUIRE(sets.train.size() == train);
    REQUIRE(sets.test.size() == test);
    auto all = sets.train;
    all.insert(all.end(), sets.test.begin(), sets.test.end());
    REQUIRE(as_set(all).size() == all.size());
    for (const auto& c : all) {
      REQUIRE((c.size() == 2 || c.size() == 3));
      for (auto h : c.members()) REQUIRE(std::binary_search(pool.begin(), pool.end(), h));
    }
    const auto again = build_class_sets(n, pool, sizes, train, 0, gen.split(1000 + trial), {}, cap);
    REQUIRE(as_set(again.train) == as_set(sets.train));

    const auto excluded = build_class_sets(n, pool, sizes, 0, std::min<std::size_t>(10, possible - train),
                                           gen.split(2000 + trial), sets.train, cap);
    for (const auto& c : excluded.test) REQUIRE_FALSE(as_set(sets.train).contains(c.sorted_members()));
  }
}

TEST_CASE("class sets reject impossible requests", "[hypothesis]") {
  const std::vector<HypothesisId> pool{0, 1, 2, 3};
  const int sizes[] = {2};
  CHECK_NOTHROW(build_class_sets(2, pool, sizes, 6, 0, CounterRng(0)));
  CHECK_THROWS_AS(build_class_sets(2, pool, sizes, 5, 2, CounterRng(0)), CapacityError);
  const int empty_sizes[] = {0};
  CHECK_THROWS_AS(build_class_sets(2, pool, empty_sizes, 1, 0, CounterRng(0)), BoundsError);
}

TEST_CASE("id-class setup matches the default combinatorics", "[hypothesis]") {
  SetupParams p;
  p.seed = 7;
  const auto setup = build_generalization_setup(p);
  CHECK(setup.train_classes.size() == 12358);
  CHECK(setup.test_classes.size() == 512);
  const auto train = as_set(setup.train_classes);
  CHECK(train.size() == 12358);
  for (const auto& c : setup.test_classes) CHECK_FALSE(train.contains(c.sorted_members()));
}

TEST_CASE("generalization kinds draw from the documented pools", "[hypothesis][property]") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SetupParams base;
    base.n = 5;
    base.train_count = 200;
    base.test_count = 40;
    base.seed = seed;

    auto id = base;
    const auto id_setup = build_generalization_setup(id);
    const auto& id_pool = id_setup.pool_split.id_pool;
    const auto& ood_pool = id_setup.pool_split.ood_pool;
    auto in = [](const std::vector<HypothesisId>& pool, const HypothesisClass& c) {
      return std::all_of(c.members().begin(), c.members().end(),
                         [&](HypothesisId h) { return std::binary_search(pool.begin(), pool.end(), h); });
    };

    auto ood = base;
    ood.kind = GeneralizationKind::OodClass;
    const auto ood_setup = build_generalization_setup(ood);
    REQUIRE(as_set(ood_setup.train_classes) == as_set(id_setup.train_classes));
    for (const auto& c : ood_setup.test_classes) REQUIRE(in(ood_pool, c));

    auto id_size = base;
    id_size.kind = GeneralizationKind::IdSize;
    id_size.train_sizes = {7, 8, 9};
    id_size.test_sizes = {2, 8, 14};
    const auto id_size_setup = build_generalization_setup(id_size);
    const auto train = as_set(id_size_setup.train_classes);
    std::set<std::size_t> seen_sizes;
    for (const auto& c : id_size_setup.test_classes) {
      REQUIRE(in(id_pool, c));
      REQUIRE_FALSE(train.contains(c.sorted_members()));
      seen_sizes.insert(c.size());
    }
    REQUIRE(seen_sizes == std::set<std::size_t>{2, 8, 14});

    auto ood_size = id_size;
    ood_size.kind = GeneralizationKind::OodSize;
    const auto ood_size_setup = build_generalization_setup(ood_size);
    REQUIRE(as_set(ood_size_setup.train_classes) == train);
    for (const auto& c : ood_size_setup.test_classes) REQUIRE(in(ood_pool, c));
  }
}

TEST_CASE("setup validation", "[hypothesis]") {
  SetupParams p;
  p.test_sizes = {7};
  CHECK_THROWS_AS(build_generalization_setup(p), ConfigError);
  SetupParams q;
  q.kind = GeneralizationKind::OodClass;
  q.ood_pool_size = 0;
  CHECK_THROWS_AS(build_generalization_setup(q), ConfigError);
  SetupParams r;
  r.train_count = 20000;
  CHECK_THROWS_AS(build_generalization_setup(r), CapacityError);
  r.clamp_train_count = true;
  CHECK(build_generalization_setup(r).train_classes.size() == 12870 - 512);
  CHECK_THROWS_AS(parse_generalization_kind("sideways"), ConfigError);
}

TEST_CASE("version space filters by every observation", "[hypothesis][property]") {
  CounterRng gen(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(6));
    const auto m = 1 + gen.below(std::min<std::uint64_t>(8, std::uint64_t{1} << n));
    const auto cls = random_class(n, m, gen);
    ObservationList obs;
    const auto count = gen.below(5);
    for (std::uint64_t i = 0; i < count; ++i) {
      obs.push_back({static_cast<int>(gen.below(n)), static_cast<int>(gen.below(2))});
    }
    const auto space = version_space(cls, obs);
    for (auto h : cls.members()) {
      bool ok = true;
      for (const auto& o : obs) ok = ok && (((h >> o.x) & 1U) == static_cast<unsigned>(o.y));
      REQUIRE(ok == (std::find(space.begin(), space.end(), h) != space.end()));
    }
  }
  const HypothesisClass cls(2, {0, 3});
  const Observation bad_x[] = {{2, 0}};
  const Observation bad_y[] = {{0, 2}};
  CHECK_THROWS_AS(version_space(cls, bad_x), BoundsError);
  CHECK_THROWS_AS(version_space(cls, bad_y), BoundsError);
}

TEST_CASE("majority label prediction", "[hypothesis]") {
  const HypothesisClass cls(2, {0b00, 0b01, 0b11});
  const Observation none[] = {{0, 0}, {0, 1}};
  CHECK_THROWS_AS(bayes_predict_label(cls, none, 1), InconsistencyError);
  // Version space {01, 11} splits on x1.
  const Observation one[] = {{0, 1}};
  const auto tie = bayes_predict_label(cls, one, 1);
  CHECK(tie.tie);
  CHECK(tie.label == 0);
  // Whole class votes 1 at x0 two to one.
  const auto pred = bayes_predict_label(cls, {}, 0);
  CHECK_FALSE(pred.tie);
  CHECK(pred.label == 1);
  CHECK(vote_at(std::vector<HypothesisId>{1, 3}, 1).expected_accuracy(1) == 0.5);
}

TEST_CASE("teaching sets are minimal and isolate the target", "[hypothesis][property]") {
  CounterRng gen(4);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(gen.below(6));
    const auto m = 1 + gen.below(std::min<std::uint64_t>(10, std::uint64_t{1} << n));
    const auto cls = random_class(n, m, gen);
    const auto h = cls[gen.below(cls.size())];
    const auto ts = optimal_teaching_set(cls, h);
    REQUIRE(static_cast<int>(ts.cardinality()) == brute_teaching_size(cls, h));
    REQUIRE(version_space(cls, ts.pairs) == std::vector<HypothesisId>{h});
    for (std::size_t i = 1; i < ts.pairs.size(); ++i) REQUIRE(ts.pairs[i - 1].x < ts.pairs[i].x);

    CounterRng tie_rng = gen.split(trial);
    const auto random_ts = optimal_teaching_set(cls, h, TeachingTieBreak::Random, &tie_rng);
    REQUIRE(random_ts.cardinality() == ts.cardinality());
    REQUIRE(version_space(cls, random_ts.pairs) == std::vector<HypothesisId>{h});
  }
}

TEST_CASE("teaching set edge cases", "[hypothesis]") {
  const HypothesisClass single(3, {5});
  CHECK(optimal_teaching_set(single, 5).cardinality() == 0);
  const HypothesisClass cls(3, {1, 2});
  CHECK_THROWS_AS(optimal_teaching_set(cls, 4), MembershipError);
  CHECK_THROWS_AS(optimal_teaching_set(cls, 1, TeachingTieBreak::Random), ConfigError);
  // Inputs x0 and x1 both separate 01 from 10; lexicographic order picks x0.
  const auto ts = optimal_teaching_set(cls, 1);
  REQUIRE(ts.pairs.size() == 1);
  CHECK(ts.pairs[0] == Observation{0, 1});
}
