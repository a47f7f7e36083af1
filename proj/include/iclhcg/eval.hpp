#pragma once

// Teacher-forced accuracy of sequence models, exact version-space oracle
// baselines, and multi-seed aggregation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iclhcg/codec.hpp"
#include "iclhcg/datagen.hpp"
#include "iclhcg/hypothesis.hpp"
#include "iclhcg/nn/model.hpp"
#include "iclhcg/record.hpp"

namespace iclhcg {

struct AccuracyReport {
  std::vector<double> per_position_y;  // entry k-1 scores the k-th context label
  std::optional<double> z_accuracy;    // absent without a hypothesis prefix
  std::size_t n_episodes = 0;
  std::string split;
  std::string setup;
};

struct EvalOptions {
  std::size_t batch_size = 64;
  /// Take the z argmax over index tokens only instead of the full vocabulary.
  bool z_index_only = false;
};

namespace detail {

template <typename Row>
Token argmax_in(const Row& row, Token lo, Token hi) {
  Token best = lo;
  for (Token t = lo + 1; t < hi; ++t) {
    if (row(t) > row(best)) best = t;
  }
  return best;
}

}  // namespace detail

/// Feeds each episode minus its final token and scores argmax predictions at
/// every y position and at z.
template <typename T>
AccuracyReport eval_model(nn::SequenceModel<T>& model, std::span<const EncodedEpisode> episodes,
                          const Vocabulary& vocab, const EvalOptions& options = {}) {
  if (episodes.empty()) throw ConfigError("cannot evaluate an empty episode list");
  if (model.config().vocab != vocab.size()) {
    throw ConfigError("model vocabulary " + std::to_string(model.config().vocab) + " differs from episode vocabulary " +
                      std::to_string(vocab.size()));
  }
  const std::size_t K = episodes.front().y_positions.size();
  const bool has_z = episodes.front().z_position.has_value();
  std::vector<double> y_hits(K, 0.0);
  double z_hits = 0.0;
  const Token idx_lo = vocab.index(0);
  const Token idx_hi = vocab.index(vocab.prefix_slots());

  std::size_t start = 0;
  while (start < episodes.size()) {
    const std::size_t len = episodes[start].tokens.size();
    std::size_t end = start;
    while (end < episodes.size() && end - start < options.batch_size && episodes[end].tokens.size() == len) ++end;
    const int Tin = static_cast<int>(len) - 1;
    nn::TokenBatch batch{static_cast<int>(end - start), Tin, {}};
    batch.ids.reserve(static_cast<std::size_t>(batch.batch * Tin));
    for (std::size_t i = start; i < end; ++i) {
      const auto& ep = episodes[i];
      if (ep.y_positions.size() != K || ep.z_position.has_value() != has_z) {
        throw ConfigError("episode list mixes context lengths or prefix modes");
      }
      batch.ids.insert(batch.ids.end(), ep.tokens.begin(), ep.tokens.end() - 1);
    }
    const auto& logits = model.forward(batch);
    for (std::size_t i = start; i < end; ++i) {
      const auto& ep = episodes[i];
      const auto base = static_cast<Eigen::Index>((i - start) * static_cast<std::size_t>(Tin));
      for (std::size_t k = 0; k < K; ++k) {
        const auto p = ep.y_positions[k];
        const auto row = logits.row(base + static_cast<Eigen::Index>(p) - 1);
        Eigen::Index arg;
        row.maxCoeff(&arg);
        if (static_cast<Token>(arg) == ep.tokens[p]) y_hits[k] += 1.0;
      }
      if (has_z) {
        const auto p = *ep.z_position;
        const auto row = logits.row(base + static_cast<Eigen::Index>(p) - 1);
        Token pred;
        if (options.z_index_only) {
          pred = detail::argmax_in(row, idx_lo, idx_hi);
        } else {
          Eigen::Index arg;
          row.maxCoeff(&arg);
          pred = static_cast<Token>(arg);
        }
        if (pred == ep.tokens[p]) z_hits += 1.0;
      }
    }
    start = end;
  }
  AccuracyReport report;
  const double n = static_cast<double>(episodes.size());
  report.n_episodes = episodes.size();
  for (double h : y_hits) report.per_position_y.push_back(h / n);
  if (has_z) report.z_accuracy = z_hits / n;
  return report;
}

/// Mean over episodes of the majority-vote predictor's expected accuracy at
/// each context position k, voting over the version space of the first k-1
/// pairs (ties count 1/2).
inline std::vector<double> oracle_label_accuracy(std::span<const EpisodeTruth> truths) {
  if (truths.empty()) throw ConfigError("cannot evaluate an empty episode list");
  std::vector<double> acc(truths.front().context.size(), 0.0);
  for (const auto& t : truths) {
    if (t.context.size() != acc.size()) throw ConfigError("episode list mixes context lengths");
    std::vector<HypothesisId> space(t.cls.members().begin(), t.cls.members().end());
    for (std::size_t k = 0; k < t.context.size(); ++k) {
      const auto& o = t.context[k];
      acc[k] += vote_at(space, o.x).expected_accuracy(o.y);
      std::erase_if(space, [&](HypothesisId h) { return label_of(h, o.x) != o.y; });
    }
  }
  for (double& a : acc) a /= static_cast<double>(truths.size());
  return acc;
}

/// oracle_label_accuracy over `n_episodes` i.i.d. episodes drawn with `spec`;
/// episode i uses CounterRng(seed).split(i).
inline std::vector<double> oracle_label_curve(const EpisodeSpec& spec, std::size_t n_episodes, std::uint64_t seed) {
  if (spec.generation != Generation::Iid) throw ConfigError("oracle label curve needs i.i.d. generation");
  if (n_episodes == 0) throw ConfigError("oracle label curve needs at least one episode");
  const CounterRng root(seed);
  std::vector<EpisodeTruth> truths;
  truths.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    CounterRng rng = root.split(i);
    auto ep = gen_iid_episode(spec, rng);
    truths.push_back(EpisodeTruth{std::move(ep.cls), ep.target, std::move(ep.context)});
  }
  return oracle_label_accuracy(truths);
}

/// Identification accuracy of a learner that guesses uniformly inside the
/// version space of the full context. With `require_unique` every version
/// space must be exactly {target}, and anything else is reported as a
/// generator bug.
inline double oracle_identification(std::span<const EpisodeTruth> truths, bool require_unique = true) {
  if (truths.empty()) throw ConfigError("cannot evaluate an empty episode list");
  double total = 0.0;
  for (const auto& t : truths) {
    const auto space = version_space(t.cls, t.context);
    const bool has_target = std::find(space.begin(), space.end(), t.target) != space.end();
    if (!has_target) throw InconsistencyError("context contradicts the episode's target hypothesis");
    if (require_unique && space.size() != 1) {
      throw InconsistencyError("context leaves " + std::to_string(space.size()) +
                               " consistent hypotheses; an Opt-T context must identify the target");
    }
    total += 1.0 / static_cast<double>(space.size());
  }
  return total / static_cast<double>(truths.size());
}

inline double oracle_identification(std::span<const EncodedEpisode> episodes, bool require_unique = true) {
  std::vector<EpisodeTruth> truths;
  truths.reserve(episodes.size());
  for (const auto& ep : episodes) truths.push_back(ep.truth);
  return oracle_identification(std::span<const EpisodeTruth>(truths), require_unique);
}

struct AggregatePoint {
  int epoch = 0;
  std::vector<double> per_seed;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct AggregateCurve {
  std::string metric;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<AggregatePoint> points;
  bool truncated = false;
};

/// Pointwise mean/min/max of one metric across runs of the same config.
/// Runs of different lengths are cut to their common prefix.
inline AggregateCurve aggregate_runs(std::span<const RunRecord> runs, const std::string& metric) {
  if (runs.empty()) throw ConfigError("no runs to aggregate");
  AggregateCurve curve;
  curve.metric = metric;
  curve.config_hash = runs.front().config_hash;
  std::size_t common = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) {
    if (r.config_hash != curve.config_hash) {
      throw ConfigError("cannot aggregate runs with config hashes " + curve.config_hash + " and " + r.config_hash);
    }
    curve.seeds.push_back(r.seed);
    common = std::min(common, r.epochs.size());
  }
  for (const auto& r : runs) curve.truncated |= r.epochs.size() != common;
  if (curve.truncated) {
    std::cerr << "warning: runs differ in length; aggregating the first " << common << " epochs\n";
  }
  for (std::size_t i = 0; i < common; ++i) {
    AggregatePoint pt;
    pt.epoch = runs.front().epochs[i].epoch;
    // Epochs where any run lacks the metric (e.g. sparser label evaluation) are skipped.
    bool everywhere = true;
    for (const auto& r : runs) {
      if (r.epochs[i].epoch != pt.epoch) throw ConfigError("runs disagree on the evaluated epochs");
      everywhere &= r.epochs[i].metrics.contains(metric);
    }
    if (!everywhere) continue;
    for (const auto& r : runs) pt.per_seed.push_back(r.epochs[i].at(metric));
    pt.min = *std::min_element(pt.per_seed.begin(), pt.per_seed.end());
    pt.max = *std::max_element(pt.per_seed.begin(), pt.per_seed.end());
    double sum = 0.0;
    for (double v : pt.per_seed) sum += v;
    pt.mean = sum / static_cast<double>(pt.per_seed.size());
    // Summation rounding can push the mean of identical values off by an ulp.
    pt.mean = std::clamp(pt.mean, pt.min, pt.max);
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

/// Columns: epoch,metric,mean,min,max,seed_<s>...
inline void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateCurve> curves) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  if (curves.empty()) return;
  out << "# config_hash=" << curves.front().config_hash << '\n';
  out << "epoch,metric,mean,min,max";
  for (auto s : curves.front().seeds) out << ",seed_" << s;
  out << '\n';
  out.precision(9);
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << p.epoch << ',' << c.metric << ',' << p.mean << ',' << p.min << ',' << p.max;
      for (double v : p.per_seed) out << ',' << v;
      out << '\n';
    }
  }
}

/// Rows `position,k,accuracy,seed,split`; position is the y token's offset
/// within the episode.
inline void write_label_curve_csv(std::ostream& out, std::span<const double> curve,
                                  std::span<const std::size_t> positions, std::uint64_t seed,
                                  const std::string& split) {
  if (positions.size() != curve.size()) throw ConfigError("label curve and position list differ in length");
  out.precision(9);
  for (std::size_t k = 0; k < curve.size(); ++k) {
    out << positions[k] << ',' << (k + 1) << ',' << curve[k] << ',' << seed << ',' << split << '\n';
  }
}

}  // namespace iclhcg
