#pragma once

// Run configuration: one JSON document describing the class setup, episode
// shape, model, schedule and evaluation plan of a training run.
//
//   {
//     "version": 1,
//     "name": "e1-id-class",
//     "setup":   {"kind": "id-class", "n": 5, "id_pool_size": 16, "ood_pool_size": 16,
//                 "train_sizes": [8], "test_sizes": [8], "train_count": 12358,
//                 "test_count": 512, "clamp_train_count": false},
//     "episode": {"K": 5, "L": 8, "disparity": 1.0},
//     "model":   {"arch": "transformer", "layers": 2, "hidden": 128, "heads": 4},
//     "train":   {"epochs": 96, "batches_per_epoch": 128, "batch_size": 16, "peak_lr": 0.001,
//                 "warmup_epochs": 0, "weight_decay": 0.0005, "mask": "all-tokens",
//                 "seeds": [0, 1, 2, 3], "eval_every": 1, "eval_episodes": 512,
//                 "checkpoint_every": 1},
//     "eval":    {"companions": ["ood-class"], "identification": true, "labels": true,
//                 "label_every": 4}
//   }
//
// L = 0 trains without a hypothesis prefix. model.vocab and model.max_len are
// derived from (n, L, K); model.init_seed is the run seed. The config hash
// covers everything except "name" and "train.seeds".

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/codec.hpp"
#include "iclhcg/datagen.hpp"
#include "iclhcg/hypothesis.hpp"
#include "iclhcg/nn/model.hpp"
#include "iclhcg/train.hpp"

namespace iclhcg {

inline constexpr int kConfigVersion = 1;

struct EvalPlan {
  /// Extra test splits built from the same seed and parameters but another
  /// generalization kind; they share the run's training classes.
  std::vector<GeneralizationKind> companions;
  bool identification = true;  // z accuracy on Opt-T episodes
  bool labels = true;          // per-position y accuracy on i.i.d. episodes
  int label_every = 4;

  friend bool operator==(const EvalPlan&, const EvalPlan&) = default;
};

struct RunConfig {
  std::string name;
  SetupParams setup;
  int K = 5;
  int L = 8;
  double disparity = 1.0;
  nn::ModelConfig model;
  TrainConfig train;
  EvalPlan eval;

  Vocabulary vocabulary() const { return build_vocabulary(setup.n, L); }
  InputDistribution distribution() const { return imbalanced_distribution(setup.n, disparity); }

  /// Model config with derived vocabulary, length and init seed.
  nn::ModelConfig model_for_seed(std::uint64_t seed) const {
    auto m = model;
    const auto v = vocabulary();
    m.vocab = v.size();
    m.max_len = static_cast<int>(v.episode_length(K)) - 1;
    m.init_seed = seed;
    return m;
  }
};

namespace detail {

template <typename V>
V required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing field '" + where + "." + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("field '" + where + "." + key + "' has the wrong type: " + e.what());
  }
}

template <typename V>
V optional(const nlohmann::json& j, const char* key, V fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return required<V>(j, key, where);
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_object()) throw ConfigError(std::string("missing section '") + key + "'");
  return j.at(key);
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json companions = nlohmann::json::array();
  for (auto k : c.eval.companions) companions.push_back(std::string(to_string(k)));
  nlohmann::json model{{"arch", std::string(nn::to_string(c.model.arch))},
                       {"layers", c.model.layers},
                       {"hidden", c.model.hidden},
                       {"heads", c.model.heads}};
  if (c.model.arch == nn::Arch::Ssm) {
    model["ssm_state"] = c.model.ssm_state;
    model["ssm_expand"] = c.model.ssm_expand;
    model["ssm_conv"] = c.model.ssm_conv;
    model["ssm_dt_rank"] = c.model.ssm_dt_rank;
  }
  return nlohmann::json{
      {"version", kConfigVersion},
      {"name", c.name},
      {"setup",
       {{"kind", std::string(to_string(c.setup.kind))},
        {"n", c.setup.n},
        {"id_pool_size", c.setup.id_pool_size},
        {"ood_pool_size", c.setup.ood_pool_size},
        {"train_sizes", c.setup.train_sizes},
        {"test_sizes", c.setup.test_sizes},
        {"train_count", c.setup.train_count},
        {"test_count", c.setup.test_count},
        {"clamp_train_count", c.setup.clamp_train_count}}},
      {"episode", {{"K", c.K}, {"L", c.L}, {"disparity", c.disparity}}},
      {"model", model},
      {"train", c.train},
      {"eval",
       {{"companions", companions},
        {"identification", c.eval.identification},
        {"labels", c.eval.labels},
        {"label_every", c.eval.label_every}}}};
}

/// Parses and validates; every problem surfaces as ConfigError naming the field.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::optional;
  using detail::required;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const int version = required<int>(j, "version", "config");
  if (version != kConfigVersion) {
    throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  RunConfig c;
  c.name = optional<std::string>(j, "name", "run", "config");

  const auto& s = detail::section(j, "setup");
  c.setup.kind = parse_generalization_kind(required<std::string>(s, "kind", "setup"));
  c.setup.n = required<int>(s, "n", "setup");
  c.setup.id_pool_size = required<std::uint64_t>(s, "id_pool_size", "setup");
  c.setup.ood_pool_size = required<std::uint64_t>(s, "ood_pool_size", "setup");
  c.setup.train_sizes = required<std::vector<int>>(s, "train_sizes", "setup");
  c.setup.test_sizes = required<std::vector<int>>(s, "test_sizes", "setup");
  c.setup.train_count = required<std::size_t>(s, "train_count", "setup");
  c.setup.test_count = required<std::size_t>(s, "test_count", "setup");
  c.setup.clamp_train_count = optional<bool>(s, "clamp_train_count", false, "setup");
  if (c.setup.n < 1 || c.setup.n > kMaxInputSize) throw ConfigError("setup.n must lie in [1, 20]");

  const auto& e = detail::section(j, "episode");
  c.K = required<int>(e, "K", "episode");
  c.L = required<int>(e, "L", "episode");
  c.disparity = optional<double>(e, "disparity", 1.0, "episode");
  if (c.K < 1) throw ConfigError("episode.K must be at least 1");
  if (c.L < 0) throw ConfigError("episode.L must be nonnegative");
  if (!(c.disparity >= 1.0)) throw ConfigError("episode.disparity must be at least 1");
  if (c.L > 0) {
    for (int m : c.setup.train_sizes) {
      if (m > c.L) throw ConfigError("train class size " + std::to_string(m) + " exceeds episode.L");
    }
    for (int m : c.setup.test_sizes) {
      if (m > c.L) throw ConfigError("test class size " + std::to_string(m) + " exceeds episode.L");
    }
  }

  const auto& m = detail::section(j, "model");
  c.model.arch = nn::parse_arch(required<std::string>(m, "arch", "model"));
  c.model.layers = required<int>(m, "layers", "model");
  c.model.hidden = required<int>(m, "hidden", "model");
  c.model.heads = optional<int>(m, "heads", 4, "model");
  c.model.ssm_state = optional<int>(m, "ssm_state", 16, "model");
  c.model.ssm_expand = optional<int>(m, "ssm_expand", 2, "model");
  c.model.ssm_conv = optional<int>(m, "ssm_conv", 4, "model");
  c.model.ssm_dt_rank = optional<int>(m, "ssm_dt_rank", 0, "model");

  const auto& t = detail::section(j, "train");
  for (const char* key : {"epochs", "batches_per_epoch", "peak_lr"}) {
    if (!t.contains(key)) throw ConfigError(std::string("missing field 'train.") + key + "'");
  }
  try {
    c.train = t.get<TrainConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("invalid train section: ") + ex.what());
  }
  c.train.validate();

  if (j.contains("eval")) {
    const auto& ev = j.at("eval");
    for (const auto& k : optional<std::vector<std::string>>(ev, "companions", {}, "eval")) {
      c.eval.companions.push_back(parse_generalization_kind(k));
    }
    c.eval.identification = optional<bool>(ev, "identification", true, "eval");
    c.eval.labels = optional<bool>(ev, "labels", true, "eval");
    c.eval.label_every = optional<int>(ev, "label_every", 4, "eval");
    if (c.eval.label_every < 1) throw ConfigError("eval.label_every must be positive");
  }
  c.model_for_seed(0).validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// 64-bit FNV-1a over the canonical JSON without "name" and "train.seeds",
/// as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("name");
  j["train"].erase("seeds");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

/// The run's own setup plus one setup per companion kind, all from `seed`.
struct RunSetups {
  GeneralizationSetup primary;
  std::vector<GeneralizationSetup> companions;
};

inline SetupParams params_for_seed(const RunConfig& c, std::uint64_t seed) {
  auto p = c.setup;
  p.seed = seed;
  return p;
}

inline RunSetups build_run_setups(const RunConfig& c, std::uint64_t seed) {
  RunSetups out;
  out.primary = build_generalization_setup(params_for_seed(c, seed));
  for (auto kind : c.eval.companions) {
    auto p = params_for_seed(c, seed);
    p.kind = kind;
    if (is_size_kind(kind) != is_size_kind(c.setup.kind)) {
      throw ConfigError("companion kind " + std::string(to_string(kind)) + " does not match the run's class sizes");
    }
    auto companion = build_generalization_setup(p);
    if (companion.train_classes != out.primary.train_classes) {
      throw ConfigError("companion setup " + std::string(to_string(kind)) + " does not share training classes");
    }
    out.companions.push_back(std::move(companion));
  }
  return out;
}

/// Evaluation sets for one setup: "<prefix>" for class kinds, and
/// "<prefix>-size<m>" per test size for size kinds.
inline std::vector<std::pair<std::string, std::vector<HypothesisClass>>> eval_groups(const GeneralizationSetup& s,
                                                                                     const std::string& prefix) {
  std::vector<std::pair<std::string, std::vector<HypothesisClass>>> out;
  if (!is_size_kind(s.kind)) {
    out.emplace_back(prefix, s.test_classes);
    return out;
  }
  for (int m : s.test_sizes) {
    std::vector<HypothesisClass> group;
    for (const auto& c : s.test_classes) {
      if (c.size() == static_cast<std::size_t>(m)) group.push_back(c);
    }
    if (!group.empty()) out.emplace_back(prefix + "-size" + std::to_string(m), std::move(group));
  }
  return out;
}

inline std::string split_name(GeneralizationKind primary, GeneralizationKind kind) {
  return kind == primary ? std::string("test") : "test-" + std::string(to_string(kind));
}

}  // namespace iclhcg
