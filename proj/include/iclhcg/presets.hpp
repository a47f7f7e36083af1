#pragma once

// Named experiment grids. At scale 1 every preset uses the full schedule
// (768 epochs x 1024 batches) and the published class-setup tables; a scale
// s < 1 multiplies both epochs and batches per epoch by sqrt(s).

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "iclhcg/config.hpp"

namespace iclhcg {

struct ExperimentArm {
  std::string label;
  RunConfig config;
};

struct ExperimentPreset {
  std::string name;
  std::string description;
  std::vector<ExperimentArm> arms;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"e1-id-class",      "e2-ood-class",  "e3-size",
                                              "e4-arch",          "e5-class-count", "e6-imbalance",
                                              "e7-instruction",   "e8-diversity"};
  return names;
}

/// Accepts "1/64", "0.015625" or "1".
inline double parse_scale(std::string_view text) {
  const std::string s(text);
  try {
    const auto slash = s.find('/');
    std::size_t used = 0;
    double value;
    if (slash == std::string::npos) {
      value = std::stod(s, &used);
      if (used != s.size()) throw ConfigError("");
    } else {
      const double num = std::stod(s.substr(0, slash), &used);
      if (used != slash) throw ConfigError("");
      const std::string den_text = s.substr(slash + 1);
      const double den = std::stod(den_text, &used);
      if (used != den_text.size()) throw ConfigError("");
      value = num / den;
    }
    if (!(value > 0.0 && value <= 1.0)) throw ConfigError("");
    return value;
  } catch (const std::exception&) {
    throw ConfigError("scale '" + s + "' must be a number or fraction in (0, 1]");
  }
}

namespace detail {

inline int scaled_count(int full, double scale) {
  return std::max(1, static_cast<int>(std::lround(full * std::sqrt(scale))));
}

/// Peak rates: the selected values of the published search grid at full
/// scale; the shallow transformer used below full scale takes the top of its grid.
inline double peak_lr(nn::Arch arch, double scale) {
  switch (arch) {
    case nn::Arch::Transformer: return scale >= 1.0 ? 2e-4 : 1e-3;
    case nn::Arch::Ssm: return 5e-4;
    case nn::Arch::Gru:
    case nn::Arch::Lstm: return 1e-3;
  }
  return 1e-3;
}

inline nn::ModelConfig model_for(nn::Arch arch, double scale) {
  nn::ModelConfig m;
  m.arch = arch;
  m.layers = arch == nn::Arch::Transformer && scale >= 1.0 ? 8 : 2;
  m.hidden = 128;
  m.heads = 4;
  return m;
}

inline TrainConfig schedule(double scale, nn::Arch arch) {
  TrainConfig t;
  t.epochs = scaled_count(768, scale);
  t.batches_per_epoch = scaled_count(1024, scale);
  t.batch_size = 16;
  t.peak_lr = peak_lr(arch, scale);
  t.warmup_epochs = 0;
  t.weight_decay = 5e-4;
  t.mask = MaskMode::AllTokens;
  t.seeds = {0, 1, 2, 3};
  t.eval_every = 1;
  t.eval_episodes = 512;
  t.checkpoint_every = 1;
  return t;
}

inline RunConfig base_config(std::string name, GeneralizationKind kind, nn::Arch arch, double scale) {
  RunConfig c;
  c.name = std::move(name);
  c.setup.kind = kind;
  c.setup.n = 5;
  c.setup.id_pool_size = 16;
  c.setup.ood_pool_size = 16;
  if (is_size_kind(kind)) {
    c.setup.train_sizes = {7, 8, 9};
    c.setup.test_sizes = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    c.setup.train_count = 4096;
    c.L = 16;
  } else {
    c.setup.train_sizes = {8};
    c.setup.test_sizes = {8};
    c.setup.train_count = 12358;
    c.L = 8;
  }
  c.setup.test_count = 512;
  c.K = 5;
  c.disparity = 1.0;
  c.model = model_for(arch, scale);
  c.train = schedule(scale, arch);
  c.eval.label_every = std::max(1, c.train.epochs / 24);
  if (kind == GeneralizationKind::IdClass) c.eval.companions = {GeneralizationKind::OodClass};
  if (kind == GeneralizationKind::IdSize) c.eval.companions = {GeneralizationKind::OodSize};
  return c;
}

/// The ID-class run: its companion OOD split shares the trained model.
inline RunConfig class_generalization(std::string name, nn::Arch arch, double scale) {
  return base_config(std::move(name), GeneralizationKind::IdClass, arch, scale);
}

inline RunConfig instruction_config(std::string name, bool prefix, double scale) {
  auto c = base_config(std::move(name), GeneralizationKind::IdClass, nn::Arch::Transformer, scale);
  c.setup.n = 4;
  c.setup.id_pool_size = 16;
  c.setup.ood_pool_size = 0;
  c.setup.train_sizes = {4};
  c.setup.test_sizes = {4};
  c.setup.train_count = 1308;
  c.K = 12;
  c.L = prefix ? 4 : 0;
  c.eval.companions.clear();
  return c;
}

inline RunConfig diversity_config(std::string name, std::uint64_t id_pool, bool prefix, double scale) {
  auto c = base_config(std::move(name), GeneralizationKind::OodClass, nn::Arch::Transformer, scale);
  c.setup.n = 6;
  c.setup.id_pool_size = id_pool;
  c.setup.ood_pool_size = 16;
  c.setup.train_count = 12358;
  c.setup.clamp_train_count = true;
  c.K = 12;
  c.L = prefix ? 8 : 0;
  c.eval.companions.clear();
  return c;
}

}  // namespace detail

inline ExperimentPreset make_preset(std::string_view name, double scale) {
  using detail::class_generalization;
  using nn::Arch;
  ExperimentPreset p;
  p.name = std::string(name);
  if (name == "e1-id-class") {
    p.description = "transformer on unseen classes from the training pool (companion OOD split from the same runs)";
    p.arms.push_back({"transformer", class_generalization(p.name, Arch::Transformer, scale)});
  } else if (name == "e2-ood-class") {
    p.description = "transformer on classes drawn from the held-out pool; the same runs as e1-id-class";
    p.arms.push_back({"transformer", class_generalization(p.name, Arch::Transformer, scale)});
  } else if (name == "e3-size") {
    p.description = "train on class sizes 7-9, test on sizes 2-14 from the ID and OOD pools";
    p.arms.push_back({"transformer", detail::base_config(p.name, GeneralizationKind::IdSize, Arch::Transformer, scale)});
  } else if (name == "e4-arch") {
    p.description = "transformer, selective SSM, LSTM and GRU on the ID/OOD class setup";
    for (auto arch : {Arch::Transformer, Arch::Ssm, Arch::Lstm, Arch::Gru}) {
      p.arms.push_back({std::string(nn::to_string(arch)), class_generalization(p.name, arch, scale)});
    }
  } else if (name == "e5-class-count") {
    p.description = "4, 16 and 64 training classes for transformer and selective SSM";
    for (auto arch : {Arch::Transformer, Arch::Ssm}) {
      for (std::size_t count : {4u, 16u, 64u}) {
        auto c = class_generalization(p.name, arch, scale);
        c.setup.train_count = count;
        p.arms.push_back({std::string(nn::to_string(arch)) + "-classes" + std::to_string(count), c});
      }
    }
  } else if (name == "e6-imbalance") {
    p.description = "input-distribution disparity D in {1, 2, 4}";
    for (double d : {1.0, 2.0, 4.0}) {
      auto c = class_generalization(p.name, Arch::Transformer, scale);
      c.disparity = d;
      p.arms.push_back({"D" + std::to_string(static_cast<int>(d)), c});
    }
  } else if (name == "e7-instruction") {
    p.description = "label accuracy with and without the hypothesis prefix (n=4, K=12, L=4)";
    p.arms.push_back({"prefix", detail::instruction_config(p.name, true, scale)});
    p.arms.push_back({"no-prefix", detail::instruction_config(p.name, false, scale)});
  } else if (name == "e8-diversity") {
    p.description = "OOD label accuracy versus training-pool size, with and without the prefix (n=6, K=12)";
    for (std::uint64_t pool : {8u, 16u, 24u, 32u, 48u}) {
      for (bool prefix : {true, false}) {
        p.arms.push_back({std::string(prefix ? "prefix" : "no-prefix") + "-pool" + std::to_string(pool),
                          detail::diversity_config(p.name, pool, prefix, scale)});
      }
    }
  } else {
    std::string list;
    for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "'; available: " + list);
  }
  return p;
}

}  // namespace iclhcg
