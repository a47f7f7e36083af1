#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclhcg/codec.hpp"
#include "iclhcg/error.hpp"
#include "iclhcg/hypothesis.hpp"
#include "iclhcg/rng.hpp"

namespace iclhcg {

struct InputDistribution {
  std::vector<double> probs;
  double disparity = 1.0;
};

inline InputDistribution uniform_distribution(int n) {
  return InputDistribution{std::vector<double>(static_cast<std::size_t>(n), 1.0 / n), 1.0};
}

/// norm(1/sqrt(D), ..., 1/sqrt(D), [1 if n odd], sqrt(D), ..., sqrt(D)), with
/// floor(n/2) low terms and floor(n/2) high terms.
inline InputDistribution imbalanced_distribution(int n, double disparity) {
  if (n < 1) throw BoundsError("input-space size must be positive");
  if (!(disparity >= 1.0)) throw BoundsError("disparity must be at least 1");
  const double root = std::sqrt(disparity);
  std::vector<double> w(static_cast<std::size_t>(n));
  const int half = n / 2;
  for (int i = 0; i < n; ++i) {
    if (i < half) {
      w[static_cast<std::size_t>(i)] = 1.0 / root;
    } else if (n % 2 == 1 && i == half) {
      w[static_cast<std::size_t>(i)] = 1.0;
    } else {
      w[static_cast<std::size_t>(i)] = root;
    }
  }
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  // n == 1 has only the middle term.
  return InputDistribution{std::move(w), n == 1 ? 1.0 : disparity};
}

enum class Split { Train, Test };
enum class Generation { Iid, OptT };

inline std::string_view to_string(Generation g) { return g == Generation::Iid ? "iid" : "opt-t"; }

inline Generation parse_generation(std::string_view name) {
  if (name == "iid") return Generation::Iid;
  if (name == "opt-t") return Generation::OptT;
  throw ConfigError("unknown generation '" + std::string(name) + "' (expected iid|opt-t)");
}

/// Everything needed to draw episodes from one class list.
struct EpisodeSpec {
  std::span<const HypothesisClass> classes;
  int n = 0;
  int context_length = 1;  // K
  int prefix_slots = 0;    // L
  Generation generation = Generation::Iid;
  InputDistribution distribution;
  bool shuffle_members = true;

  Vocabulary vocabulary() const { return Vocabulary(n, prefix_slots); }
};

inline EpisodeSpec make_episode_spec(const GeneralizationSetup& setup, Split split, int K, int L,
                                     Generation generation, InputDistribution distribution) {
  EpisodeSpec spec;
  spec.classes = split == Split::Train ? std::span<const HypothesisClass>(setup.train_classes)
                                       : std::span<const HypothesisClass>(setup.test_classes);
  spec.n = setup.n;
  spec.context_length = K;
  spec.prefix_slots = L;
  spec.generation = generation;
  spec.distribution = std::move(distribution);
  return spec;
}

struct RawEpisode {
  HypothesisClass cls;
  HypothesisId target = 0;
  ObservationList context;
};

namespace detail {

inline void check_spec(const EpisodeSpec& spec) {
  if (spec.classes.empty()) throw ConfigError("episode spec has an empty class list");
  if (spec.context_length < 1) throw ConfigError("context length K must be at least 1");
  if (spec.distribution.probs.size() != static_cast<std::size_t>(spec.n)) {
    throw ConfigError("input distribution length differs from n");
  }
}

inline HypothesisClass draw_class(const EpisodeSpec& spec, CounterRng& rng) {
  const auto& cls = spec.classes[rng.below(spec.classes.size())];
  return spec.shuffle_members ? cls.permuted(rng) : cls;
}

}  // namespace detail

/// Uniform class, uniform member, K i.i.d. inputs from the spec distribution.
inline RawEpisode gen_iid_episode(const EpisodeSpec& spec, CounterRng& rng) {
  if (spec.generation != Generation::Iid) throw ConfigError("spec is not configured for i.i.d. generation");
  detail::check_spec(spec);
  RawEpisode ep;
  ep.cls = detail::draw_class(spec, rng);
  ep.target = ep.cls[rng.below(ep.cls.size())];
  ep.context.reserve(static_cast<std::size_t>(spec.context_length));
  for (int k = 0; k < spec.context_length; ++k) {
    const int x = static_cast<int>(rng.categorical(spec.distribution.probs));
    ep.context.push_back({x, label_of(ep.target, x)});
  }
  return ep;
}

/// Teaching set padded to K by uniform duplicates, then uniformly permuted.
inline RawEpisode gen_optt_episode(const EpisodeSpec& spec, CounterRng& rng) {
  if (spec.generation != Generation::OptT) throw ConfigError("spec is not configured for Opt-T generation");
  detail::check_spec(spec);
  RawEpisode ep;
  ep.cls = detail::draw_class(spec, rng);
  if (ep.cls.size() == 1) {
    throw UnsupportedEpisodeError("Opt-T is undefined for a single-hypothesis class (empty teaching set)");
  }
  ep.target = ep.cls[rng.below(ep.cls.size())];
  const auto teaching = optimal_teaching_set(ep.cls, ep.target);
  const auto K = static_cast<std::size_t>(spec.context_length);
  if (teaching.cardinality() > K) {
    throw CapacityError("teaching set of " + std::to_string(teaching.cardinality()) +
                        " pairs exceeds K=" + std::to_string(K));
  }
  ep.context = teaching.pairs;
  while (ep.context.size() < K) ep.context.push_back(teaching.pairs[rng.below(teaching.cardinality())]);
  rng.shuffle(std::span<Observation>(ep.context));
  return ep;
}

inline RawEpisode gen_episode(const EpisodeSpec& spec, CounterRng& rng) {
  return spec.generation == Generation::Iid ? gen_iid_episode(spec, rng) : gen_optt_episode(spec, rng);
}

inline EncodedEpisode make_episode(const EpisodeSpec& spec, CounterRng rng) {
  auto raw = gen_episode(spec, rng);
  return encode_episode(raw.cls, raw.target, raw.context, spec.vocabulary(), rng);
}

struct Batch {
  std::vector<EncodedEpisode> episodes;
  int n = 0;
  int prefix_slots = 0;
  int context_length = 0;

  std::size_t size() const { return episodes.size(); }
  std::size_t sequence_length() const { return episodes.empty() ? 0 : episodes.front().tokens.size(); }
};

/// Checks the (n, L, K) uniformity of a batch assembled elsewhere.
inline void validate_batch(const Batch& batch) {
  for (const auto& ep : batch.episodes) {
    if (ep.truth.cls.n() != batch.n || ep.context_length() != batch.context_length ||
        ep.tokens.size() != Vocabulary(batch.n, batch.prefix_slots).episode_length(batch.context_length)) {
      throw ConfigError("batch mixes episodes of different (n, L, K)");
    }
  }
}

/// B episodes; episode i draws from the child stream rng.split(i), so batches
/// can be assembled in any order or in parallel with identical results.
inline Batch make_batch(const EpisodeSpec& spec, std::size_t B, const CounterRng& rng) {
  if (B < 1) throw ConfigError("batch size must be at least 1");
  Batch batch;
  batch.n = spec.n;
  batch.prefix_slots = spec.prefix_slots;
  batch.context_length = spec.context_length;
  batch.episodes.reserve(B);
  for (std::size_t i = 0; i < B; ++i) batch.episodes.push_back(make_episode(spec, rng.split(i)));
  return batch;
}

}  // namespace iclhcg
