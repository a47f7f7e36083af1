#pragma once

// Finite hypothesis universes over X = {x_0, ..., x_{n-1}} with binary labels.
// A hypothesis is stored as its label bitmask: label(x_j) = bit j of the id.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "iclhcg/error.hpp"
#include "iclhcg/rng.hpp"

namespace iclhcg {

using HypothesisId = std::uint32_t;

inline constexpr int kMaxInputSize = 20;
inline constexpr std::uint64_t kClassEnumerationCap = 1'000'000;

struct Hypothesis {
  HypothesisId id = 0;
  int n = 0;

  int label(int x) const { return static_cast<int>((id >> x) & 1U); }

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

inline int label_of(HypothesisId h, int x) { return static_cast<int>((h >> x) & 1U); }

struct HypothesisUniverse {
  int n = 0;

  std::uint64_t size() const { return std::uint64_t{1} << n; }

  std::vector<HypothesisId> ids() const {
    std::vector<HypothesisId> out(size());
    std::iota(out.begin(), out.end(), HypothesisId{0});
    return out;
  }

  bool contains(HypothesisId h) const { return h < size(); }
};

inline HypothesisUniverse enumerate_universe(int n) {
  if (n < 1 || n > kMaxInputSize) {
    throw BoundsError("input-space size must lie in [1, " + std::to_string(kMaxInputSize) +
                      "], got " + std::to_string(n));
  }
  return HypothesisUniverse{n};
}

/// An ordered list of distinct hypotheses. Equality is set equality; the
/// order only matters for prefix encoding, where datagen reshuffles it.
class HypothesisClass {
 public:
  HypothesisClass() = default;

  HypothesisClass(int n, std::vector<HypothesisId> members) : n_(n), members_(std::move(members)) {
    if (members_.empty()) throw BoundsError("hypothesis class must contain at least one member");
    const auto limit = std::uint64_t{1} << n_;
    for (auto h : members_) {
      if (h >= limit) throw BoundsError("hypothesis id " + std::to_string(h) + " outside universe");
    }
    auto sorted = members_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw BoundsError("hypothesis class contains duplicate members");
    }
  }

  int n() const { return n_; }
  std::size_t size() const { return members_.size(); }
  std::span<const HypothesisId> members() const { return members_; }
  HypothesisId operator[](std::size_t i) const { return members_[i]; }

  bool contains(HypothesisId h) const {
    return std::find(members_.begin(), members_.end(), h) != members_.end();
  }

  std::optional<std::size_t> position_of(HypothesisId h) const {
    auto it = std::find(members_.begin(), members_.end(), h);
    if (it == members_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - members_.begin());
  }

  std::vector<HypothesisId> sorted_members() const {
    auto out = members_;
    std::sort(out.begin(), out.end());
    return out;
  }

  HypothesisClass permuted(CounterRng& rng) const {
    HypothesisClass out = *this;
    rng.shuffle(std::span<HypothesisId>(out.members_));
    return out;
  }

  friend bool operator==(const HypothesisClass& a, const HypothesisClass& b) {
    return a.n_ == b.n_ && a.sorted_members() == b.sorted_members();
  }

 private:
  int n_ = 0;
  std::vector<HypothesisId> members_;
};

struct MemberSetHash {
  std::size_t operator()(const std::vector<HypothesisId>& key) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto v : key) {
      h ^= v;
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

using MemberSetIndex = std::unordered_set<std::vector<HypothesisId>, MemberSetHash>;

struct Observation {
  int x = 0;
  int y = 0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

using ObservationList = std::vector<Observation>;

struct PoolSplit {
  std::vector<HypothesisId> id_pool;   // sorted
  std::vector<HypothesisId> ood_pool;  // sorted
};

/// Exact binomial coefficient C(pool_size, m).
inline std::uint64_t count_classes(std::uint64_t pool_size, std::uint64_t m) {
  if (m > pool_size) {
    throw BoundsError("class size " + std::to_string(m) + " exceeds pool size " +
                      std::to_string(pool_size));
  }
  m = std::min(m, pool_size - m);
  std::uint64_t result = 1;
  for (std::uint64_t i = 1; i <= m; ++i) {
    // result * (pool - m + i) / i is exact at every step.
    const std::uint64_t num = pool_size - m + i;
    const std::uint64_t g = std::gcd(result, i);
    const std::uint64_t r = result / g;
    const std::uint64_t q = num / (i / g);
    if (r != 0 && q > UINT64_MAX / r) throw BoundsError("binomial coefficient overflows 64 bits");
    result = r * q;
  }
  return result;
}

inline PoolSplit split_pools(const HypothesisUniverse& universe, std::uint64_t id_size,
                             std::uint64_t ood_size, CounterRng rng) {
  if (id_size + ood_size > universe.size()) {
    throw BoundsError("pool sizes " + std::to_string(id_size) + "+" + std::to_string(ood_size) +
                      " exceed universe of " + std::to_string(universe.size()));
  }
  auto ids = universe.ids();
  rng.shuffle(std::span<HypothesisId>(ids));
  PoolSplit split;
  split.id_pool.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(id_size));
  split.ood_pool.assign(ids.begin() + static_cast<std::ptrdiff_t>(id_size),
                        ids.begin() + static_cast<std::ptrdiff_t>(id_size + ood_size));
  std::sort(split.id_pool.begin(), split.id_pool.end());
  std::sort(split.ood_pool.begin(), split.ood_pool.end());
  return split;
}

struct ClassSets {
  std::vector<HypothesisClass> train;
  std::vector<HypothesisClass> test;
};

namespace detail {

// Calls visit(members) for every m-subset of pool, in lexicographic order of
// pool positions.
inline void for_each_combination(std::span<const HypothesisId> pool, std::size_t m,
                                 const std::function<void(const std::vector<HypothesisId>&)>& visit) {
  const std::size_t p = pool.size();
  if (m > p) return;
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<HypothesisId> members(m);
  while (true) {
    for (std::size_t i = 0; i < m; ++i) members[i] = pool[idx[i]];
    visit(members);
    std::size_t i = m;
    while (i > 0 && idx[i - 1] == p - m + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < m; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace detail

/// Draws `train_count` + `test_count` distinct classes whose sizes lie in
/// `sizes`, uniformly over all such classes of `pool` not listed in
/// `exclude`. Train classes come first from the same stream, so two calls that
/// differ only in test_count produce identical train lists.
inline ClassSets build_class_sets(int n, std::span<const HypothesisId> pool,
                                  std::span<const int> sizes, std::size_t train_count,
                                  std::size_t test_count, CounterRng rng,
                                  std::span<const HypothesisClass> exclude = {},
                                  std::uint64_t enumeration_cap = kClassEnumerationCap) {
  std::vector<int> unique_sizes(sizes.begin(), sizes.end());
  std::sort(unique_sizes.begin(), unique_sizes.end());
  unique_sizes.erase(std::unique(unique_sizes.begin(), unique_sizes.end()), unique_sizes.end());
  if (unique_sizes.empty()) throw ConfigError("no class sizes requested");

  std::uint64_t total = 0;
  std::vector<double> size_weights;
  for (int m : unique_sizes) {
    if (m < 1) throw BoundsError("class size must be at least 1");
    const auto c = count_classes(pool.size(), static_cast<std::uint64_t>(m));
    total += c;
    size_weights.push_back(static_cast<double>(c));
  }

  MemberSetIndex excluded;
  std::uint64_t excluded_in_range = 0;
  for (const auto& cls : exclude) {
    auto key = cls.sorted_members();
    if (!std::binary_search(unique_sizes.begin(), unique_sizes.end(), static_cast<int>(key.size())))
      continue;
    bool inside = std::all_of(key.begin(), key.end(), [&](HypothesisId h) {
      return std::find(pool.begin(), pool.end(), h) != pool.end();
    });
    if (inside && excluded.insert(std::move(key)).second) ++excluded_in_range;
  }

  const std::uint64_t available = total - excluded_in_range;
  const std::uint64_t wanted = static_cast<std::uint64_t>(train_count) + test_count;
  if (wanted > available) {
    throw CapacityError("requested " + std::to_string(wanted) + " classes but only " +
                        std::to_string(available) + " distinct classes exist");
  }

  std::vector<std::vector<HypothesisId>> chosen;
  chosen.reserve(wanted);
  if (total <= enumeration_cap) {
    std::vector<std::vector<HypothesisId>> all;
    all.reserve(available);
    for (int m : unique_sizes) {
      detail::for_each_combination(pool, static_cast<std::size_t>(m), [&](const auto& members) {
        if (!excluded.contains(members)) all.push_back(members);
      });
    }
    rng.shuffle(std::span<std::vector<HypothesisId>>(all));
    all.resize(wanted);
    chosen = std::move(all);
  } else {
    MemberSetIndex seen = excluded;
    std::vector<HypothesisId> scratch(pool.begin(), pool.end());
    while (chosen.size() < wanted) {
      const auto m = static_cast<std::size_t>(unique_sizes[rng.categorical(size_weights)]);
      for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(scratch.size() - i));
        std::swap(scratch[i], scratch[j]);
      }
      std::vector<HypothesisId> key(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(m));
      std::sort(key.begin(), key.end());
      if (seen.insert(key).second) chosen.push_back(std::move(key));
    }
  }

  ClassSets out;
  out.train.reserve(train_count);
  out.test.reserve(test_count);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto& target = i < train_count ? out.train : out.test;
    target.emplace_back(n, std::move(chosen[i]));
  }
  return out;
}

enum class GeneralizationKind { IdClass, OodClass, IdSize, OodSize };

inline std::string_view to_string(GeneralizationKind kind) {
  switch (kind) {
    case GeneralizationKind::IdClass: return "id-class";
    case GeneralizationKind::OodClass: return "ood-class";
    case GeneralizationKind::IdSize: return "id-size";
    case GeneralizationKind::OodSize: return "ood-size";
  }
  return "?";
}

inline GeneralizationKind parse_generalization_kind(std::string_view name) {
  if (name == "id-class") return GeneralizationKind::IdClass;
  if (name == "ood-class") return GeneralizationKind::OodClass;
  if (name == "id-size") return GeneralizationKind::IdSize;
  if (name == "ood-size") return GeneralizationKind::OodSize;
  throw ConfigError("unknown generalization kind '" + std::string(name) + "'");
}

inline bool is_ood(GeneralizationKind k) {
  return k == GeneralizationKind::OodClass || k == GeneralizationKind::OodSize;
}

inline bool is_size_kind(GeneralizationKind k) {
  return k == GeneralizationKind::IdSize || k == GeneralizationKind::OodSize;
}

struct SetupParams {
  GeneralizationKind kind = GeneralizationKind::IdClass;
  int n = 5;
  std::uint64_t id_pool_size = 16;
  std::uint64_t ood_pool_size = 16;
  std::vector<int> train_sizes{8};
  std::vector<int> test_sizes{8};
  std::size_t train_count = 12358;
  /// Class kinds: exact number of test classes. Size kinds: per test size,
  /// capped at the number of available classes of that size.
  std::size_t test_count = 512;
  /// Cap train_count at the number of possible classes instead of failing.
  bool clamp_train_count = false;
  std::uint64_t seed = 0;
};

struct GeneralizationSetup {
  GeneralizationKind kind = GeneralizationKind::IdClass;
  int n = 0;
  std::vector<int> train_sizes;
  std::vector<int> test_sizes;
  std::vector<HypothesisClass> train_classes;
  std::vector<HypothesisClass> test_classes;
  PoolSplit pool_split;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t possible_classes(std::size_t pool, std::span<const int> sizes) {
  std::uint64_t total = 0;
  std::vector<int> s(sizes.begin(), sizes.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  for (int m : s) {
    if (static_cast<std::size_t>(m) <= pool) total += count_classes(pool, static_cast<std::uint64_t>(m));
  }
  return total;
}

}  // namespace detail

/// Builds train/test class lists for one of the four generalization types.
/// Train classes always come from the ID pool via the same RNG stream, so
/// setups that differ only in kind (and test parameters) share their
/// training classes and can be evaluated against one trained model.
inline GeneralizationSetup build_generalization_setup(const SetupParams& p) {
  const auto universe = enumerate_universe(p.n);
  CounterRng root(p.seed);
  GeneralizationSetup setup;
  setup.kind = p.kind;
  setup.n = p.n;
  setup.train_sizes = p.train_sizes;
  setup.test_sizes = p.test_sizes;
  setup.seed = p.seed;
  setup.pool_split = split_pools(universe, p.id_pool_size, p.ood_pool_size, root.split(1));

  const auto& id_pool = setup.pool_split.id_pool;
  const auto& ood_pool = setup.pool_split.ood_pool;
  if (id_pool.empty()) throw ConfigError("ID pool is empty");
  if (is_ood(p.kind) && ood_pool.empty()) throw ConfigError("OOD generalization needs a nonempty OOD pool");

  std::size_t train_count = p.train_count;
  if (p.clamp_train_count) {
    const auto possible = detail::possible_classes(id_pool.size(), p.train_sizes);
    const bool shares_pool = p.kind == GeneralizationKind::IdClass;
    const std::uint64_t reserve = shares_pool ? p.test_count : 0;
    const std::uint64_t room = possible > reserve ? possible - reserve : 0;
    train_count = static_cast<std::size_t>(std::min<std::uint64_t>(train_count, room));
  }

  const auto train_stream = root.split(2);
  switch (p.kind) {
    case GeneralizationKind::IdClass: {
      if (p.test_sizes != p.train_sizes) {
        throw ConfigError("id-class generalization uses identical train and test sizes");
      }
      auto sets = build_class_sets(p.n, id_pool, p.train_sizes, train_count, p.test_count, train_stream);
      setup.train_classes = std::move(sets.train);
      setup.test_classes = std::move(sets.test);
      break;
    }
    case GeneralizationKind::OodClass: {
      setup.train_classes =
          build_class_sets(p.n, id_pool, p.train_sizes, train_count, 0, train_stream).train;
      setup.test_classes =
          build_class_sets(p.n, ood_pool, p.test_sizes, 0, p.test_count, root.split(3)).test;
      break;
    }
    case GeneralizationKind::IdSize:
    case GeneralizationKind::OodSize: {
      setup.train_classes =
          build_class_sets(p.n, id_pool, p.train_sizes, train_count, 0, train_stream).train;
      const auto& test_pool = p.kind == GeneralizationKind::IdSize ? id_pool : ood_pool;
      std::span<const HypothesisClass> exclude;
      if (p.kind == GeneralizationKind::IdSize) exclude = setup.train_classes;
      for (int m : p.test_sizes) {
        if (static_cast<std::size_t>(m) > test_pool.size()) {
          throw CapacityError("test size " + std::to_string(m) + " exceeds pool of " +
                              std::to_string(test_pool.size()));
        }
        std::uint64_t available = count_classes(test_pool.size(), static_cast<std::uint64_t>(m));
        for (const auto& c : exclude) {
          if (c.size() == static_cast<std::size_t>(m)) --available;
        }
        const auto count = static_cast<std::size_t>(std::min<std::uint64_t>(p.test_count, available));
        const int single[] = {m};
        auto sets = build_class_sets(p.n, test_pool, single, 0, count,
                                     root.split(3, static_cast<std::uint64_t>(m)), exclude);
        for (auto& c : sets.test) setup.test_classes.push_back(std::move(c));
      }
      break;
    }
  }
  return setup;
}

/// Members of `cls` consistent with every observation (the zero 0/1-risk set),
/// in class order.
inline std::vector<HypothesisId> version_space(const HypothesisClass& cls, std::span<const Observation> obs) {
  for (const auto& o : obs) {
    if (o.x < 0 || o.x >= cls.n()) throw BoundsError("observation input index out of range");
    if (o.y != 0 && o.y != 1) throw BoundsError("observation label must be 0 or 1");
  }
  std::vector<HypothesisId> out;
  for (auto h : cls.members()) {
    bool consistent = std::all_of(obs.begin(), obs.end(),
                                  [h](const Observation& o) { return label_of(h, o.x) == o.y; });
    if (consistent) out.push_back(h);
  }
  return out;
}

struct LabelVote {
  std::size_t zeros = 0;
  std::size_t ones = 0;

  bool tie() const { return zeros == ones; }
  /// Probability that a majority vote with fair tie-breaking is correct when
  /// the true label is `truth`.
  double expected_accuracy(int truth) const {
    if (tie()) return 0.5;
    const int majority = ones > zeros ? 1 : 0;
    return majority == truth ? 1.0 : 0.0;
  }
};

inline LabelVote vote_at(std::span<const HypothesisId> space, int x) {
  LabelVote v;
  for (auto h : space) (label_of(h, x) ? v.ones : v.zeros)++;
  return v;
}

struct LabelPrediction {
  int label = 0;
  bool tie = false;
};

/// Majority label over the version space at `query_x`. Ties are broken by
/// `tie_rng` when supplied, otherwise reported with label 0.
inline LabelPrediction bayes_predict_label(const HypothesisClass& cls, std::span<const Observation> obs,
                                           int query_x, CounterRng* tie_rng = nullptr) {
  if (query_x < 0 || query_x >= cls.n()) throw BoundsError("query input index out of range");
  const auto space = version_space(cls, obs);
  if (space.empty()) throw InconsistencyError("version space is empty: observations contradict the class");
  const auto vote = vote_at(space, query_x);
  LabelPrediction pred;
  pred.tie = vote.tie();
  if (pred.tie) {
    pred.label = tie_rng ? static_cast<int>(tie_rng->below(2)) : 0;
  } else {
    pred.label = vote.ones > vote.zeros ? 1 : 0;
  }
  return pred;
}

struct TeachingSet {
  HypothesisId target = 0;
  ObservationList pairs;  // distinct inputs, ascending

  std::size_t cardinality() const { return pairs.size(); }
};

enum class TeachingTieBreak { Lexicographic, Random };

/// Smallest set of inputs, labelled by `h`, whose version space within `cls`
/// is exactly {h}. Subsets are scanned by size, then lexicographically by
/// input index; with TeachingTieBreak::Random one of the minimum subsets is
/// chosen uniformly using `rng`.
inline TeachingSet optimal_teaching_set(const HypothesisClass& cls, HypothesisId h,
                                        TeachingTieBreak tie_break = TeachingTieBreak::Lexicographic,
                                        CounterRng* rng = nullptr) {
  if (!cls.contains(h)) throw MembershipError("hypothesis " + std::to_string(h) + " is not in the class");
  if (tie_break == TeachingTieBreak::Random && rng == nullptr) {
    throw ConfigError("random teaching-set tie-break needs an RNG");
  }
  const int n = cls.n();
  // h is isolated by input mask S iff every other member differs from h on S.
  std::vector<std::uint32_t> diffs;
  for (auto g : cls.members()) {
    if (g != h) diffs.push_back(static_cast<std::uint32_t>(g ^ h));
  }
  auto isolates = [&](std::uint32_t mask) {
    return std::all_of(diffs.begin(), diffs.end(), [mask](std::uint32_t d) { return (d & mask) != 0; });
  };

  std::vector<HypothesisId> universe_inputs(static_cast<std::size_t>(n));
  std::iota(universe_inputs.begin(), universe_inputs.end(), HypothesisId{0});
  for (int size = 0; size <= n; ++size) {
    std::vector<std::uint32_t> minima;
    bool stop = false;
    auto consider = [&](const std::vector<HypothesisId>& inputs) {
      if (stop) return;
      std::uint32_t mask = 0;
      for (auto x : inputs) mask |= 1U << x;
      if (isolates(mask)) {
        minima.push_back(mask);
        if (tie_break == TeachingTieBreak::Lexicographic) stop = true;
      }
    };
    if (size == 0) {
      consider({});
    } else {
      detail::for_each_combination(universe_inputs, static_cast<std::size_t>(size), consider);
    }
    if (minima.empty()) continue;
    const std::uint32_t mask =
        rng != nullptr && tie_break == TeachingTieBreak::Random ? minima[rng->below(minima.size())] : minima.front();
    TeachingSet ts;
    ts.target = h;
    for (int x = 0; x < n; ++x) {
      if (mask & (1U << x)) ts.pairs.push_back({x, label_of(h, x)});
    }
    return ts;
  }
  // Distinct members always differ somewhere, so the full input set isolates h.
  throw InconsistencyError("no teaching set found; class members are not distinct");
}

}  // namespace iclhcg
