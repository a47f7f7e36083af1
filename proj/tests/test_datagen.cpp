#include <catch_amalgamated.hpp>

#include <map>

#include "iclhcg/datagen.hpp"

using namespace iclhcg;

namespace {

// Pearson statistic of observed counts against expected probabilities.
double chi_square(const std::vector<double>& counts, const std::vector<double>& probs) {
  double total = 0.0;
  for (double c : counts) total += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = total * probs[i];
    stat += (counts[i] - e) * (counts[i] - e) / e;
  }
  return stat;
}

// Upper 0.1% points of the chi-square distribution.
double chi_square_critical(std::size_t dof) {
  static const std::map<std::size_t, double> table{{1, 10.83}, {2, 13.82}, {3, 16.27}, {4, 18.47},
                                                   {5, 20.52}, {7, 24.32}, {15, 37.70}};
  return table.at(dof);
}

std::vector<HypothesisClass> small_classes() {
  return {HypothesisClass(3, {0, 3, 5, 6}), HypothesisClass(3, {1, 2, 4}), HypothesisClass(3, {7, 0})};
}

EpisodeSpec spec_for(std::span<const HypothesisClass> classes, int K, int L, Generation g,
                     InputDistribution dist) {
  EpisodeSpec s;
  s.classes = classes;
  s.n = classes.front().n();
  s.context_length = K;
  s.prefix_slots = L;
  s.generation = g;
  s.distribution = std::move(dist);
  return s;
}

}  // namespace

TEST_CASE("imbalanced distribution has the requested disparity", "[datagen]") {
  for (int n = 1; n <= 9; ++n) {
    for (double D : {1.0, 2.0, 4.0, 9.0}) {
      const auto dist = imbalanced_distribution(n, D);
      double total = 0.0;
      for (double p : dist.probs) total += p;
      REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));
      const auto [lo, hi] = std::minmax_element(dist.probs.begin(), dist.probs.end());
      const double expected = n == 1 ? 1.0 : D;
      REQUIRE(*hi / *lo == Catch::Approx(expected).epsilon(1e-12));
    }
  }
  // n = 5, D = 4: weights 1/2, 1/2, 1, 2, 2 over a total of 6.
  const auto five = imbalanced_distribution(5, 4.0);
  const std::vector<double> expected{1.0 / 12, 1.0 / 12, 1.0 / 6, 1.0 / 3, 1.0 / 3};
  for (int i = 0; i < 5; ++i) CHECK(five.probs[i] == Catch::Approx(expected[i]).epsilon(1e-12));
  CHECK_THROWS_AS(imbalanced_distribution(3, 0.5), BoundsError);
}

TEST_CASE("i.i.d. inputs follow the input distribution", "[datagen][stat]") {
  const auto classes = small_classes();
  for (double D : {1.0, 4.0}) {
    const auto dist = imbalanced_distribution(3, D);
    const auto spec = spec_for(classes, 10, 4, Generation::Iid, dist);
    std::vector<double> counts(3, 0.0);
    CounterRng rng(static_cast<std::uint64_t>(D));
    for (int i = 0; i < 5000; ++i) {
      const auto ep = gen_iid_episode(spec, rng);
      for (const auto& o : ep.context) counts[static_cast<std::size_t>(o.x)] += 1;
    }
    CHECK(chi_square(counts, dist.probs) < chi_square_critical(2));
  }
}

TEST_CASE("classes, targets and index tokens are uniform", "[datagen][stat]") {
  const auto classes = small_classes();
  const auto spec = spec_for(classes, 3, 8, Generation::Iid, uniform_distribution(3));
  std::vector<double> class_counts(3, 0.0), member_counts(4, 0.0), index_counts(8, 0.0);
  const auto vocab = spec.vocabulary();
  for (int i = 0; i < 30000; ++i) {
    const auto ep = make_episode(spec, CounterRng(11).split(static_cast<std::uint64_t>(i)));
    const auto sorted = ep.truth.cls.sorted_members();
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (classes[c].sorted_members() == sorted) {
        class_counts[c] += 1;
        if (c == 0) {
          const auto pos = std::find(sorted.begin(), sorted.end(), ep.truth.target) - sorted.begin();
          member_counts[static_cast<std::size_t>(pos)] += 1;
        }
      }
    }
    index_counts[static_cast<std::size_t>(vocab.value(ep.tokens.back()))] += 1;
  }
  CHECK(chi_square(class_counts, std::vector<double>(3, 1.0 / 3)) < chi_square_critical(2));
  CHECK(chi_square(member_counts, std::vector<double>(4, 0.25)) < chi_square_critical(3));
  CHECK(chi_square(index_counts, std::vector<double>(8, 0.125)) < chi_square_critical(7));
}

TEST_CASE("Opt-T context is the teaching set padded with its own pairs", "[datagen][property]") {
  CounterRng gen(12);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 2 + static_cast<int>(gen.below(4));
    auto ids = enumerate_universe(n).ids();
    gen.shuffle(std::span<HypothesisId>(ids));
    ids.resize(2 + gen.below(std::min<std::uint64_t>(6, ids.size() - 1)));
    const std::vector<HypothesisClass> classes{HypothesisClass(n, ids)};
    const int K = n + static_cast<int>(gen.below(6));
    const auto spec = spec_for(classes, K, 8, Generation::OptT, uniform_distribution(n));
    const auto ep = gen_optt_episode(spec, gen);
    REQUIRE(static_cast<int>(ep.context.size()) == K);
    const auto ts = optimal_teaching_set(ep.cls, ep.target);
    for (const auto& pair : ts.pairs) {
      REQUIRE(std::find(ep.context.begin(), ep.context.end(), pair) != ep.context.end());
    }
    for (const auto& o : ep.context) {
      REQUIRE(std::find(ts.pairs.begin(), ts.pairs.end(), o) != ts.pairs.end());
    }
    REQUIRE(version_space(ep.cls, ep.context) == std::vector<HypothesisId>{ep.target});
  }
}

TEST_CASE("Opt-T rejects unsupported classes", "[datagen]") {
  const std::vector<HypothesisClass> single{HypothesisClass(3, {5})};
  CounterRng rng(0);
  CHECK_THROWS_AS(gen_optt_episode(spec_for(single, 4, 2, Generation::OptT, uniform_distribution(3)), rng),
                  UnsupportedEpisodeError);
  // Isolating 000 from the three one-hot hypotheses needs all three inputs.
  const std::vector<HypothesisClass> wide{HypothesisClass(3, {0, 1, 2, 4})};
  auto spec = spec_for(wide, 2, 4, Generation::OptT, uniform_distribution(3));
  spec.shuffle_members = false;
  bool saw_capacity = false;
  for (std::uint64_t s = 0; s < 64 && !saw_capacity; ++s) {
    CounterRng r(s);
    try {
      gen_optt_episode(spec, r);
    } catch (const CapacityError&) {
      saw_capacity = true;
    }
  }
  CHECK(saw_capacity);
  CHECK_THROWS_AS(gen_iid_episode(spec, rng), ConfigError);
}

TEST_CASE("spec validation", "[datagen]") {
  const auto classes = small_classes();
  CounterRng rng(0);
  auto spec = spec_for(classes, 0, 4, Generation::Iid, uniform_distribution(3));
  CHECK_THROWS_AS(gen_iid_episode(spec, rng), ConfigError);
  spec.context_length = 3;
  spec.distribution = uniform_distribution(4);
  CHECK_THROWS_AS(gen_iid_episode(spec, rng), ConfigError);
  spec.classes = {};
  spec.distribution = uniform_distribution(3);
  CHECK_THROWS_AS(gen_iid_episode(spec, rng), ConfigError);
  CHECK_THROWS_AS(parse_generation("teacher"), ConfigError);
}

TEST_CASE("batches are reproducible episode by episode", "[datagen]") {
  const auto classes = small_classes();
  const auto spec = spec_for(classes, 5, 4, Generation::Iid, uniform_distribution(3));
  const CounterRng root(77);
  const auto batch = make_batch(spec, 16, root);
  REQUIRE(batch.size() == 16);
  REQUIRE(batch.sequence_length() == spec.vocabulary().episode_length(5));
  CHECK_NOTHROW(validate_batch(batch));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(make_episode(spec, root.split(i)).tokens == batch.episodes[i].tokens);
  }
  CHECK(make_batch(spec, 16, root).episodes.back().tokens == batch.episodes.back().tokens);
  CHECK(make_batch(spec, 16, CounterRng(78)).episodes.front().tokens != batch.episodes.front().tokens);

  auto mixed = batch;
  mixed.context_length = 4;
  CHECK_THROWS_AS(validate_batch(mixed), ConfigError);
  CHECK_THROWS_AS(make_batch(spec, 0, root), ConfigError);
}
