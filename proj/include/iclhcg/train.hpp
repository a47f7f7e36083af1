#pragma once

// Next-token pretraining: masked cross-entropy, the warmup + inverse-sqrt
// learning-rate schedule, AdamW updates, per-epoch evaluation, and resumable
// run directories.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/codec.hpp"
#include "iclhcg/datagen.hpp"
#include "iclhcg/eval.hpp"
#include "iclhcg/nn/checkpoint.hpp"
#include "iclhcg/nn/factory.hpp"
#include "iclhcg/nn/optim.hpp"
#include "iclhcg/record.hpp"

namespace iclhcg {

enum class MaskMode { AllTokens, ZOnly, QueryOnly, YOnly };

inline std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::AllTokens: return "all-tokens";
    case MaskMode::ZOnly: return "z-only";
    case MaskMode::QueryOnly: return "query-only";
    case MaskMode::YOnly: return "y-only";
  }
  return "?";
}

inline MaskMode parse_mask_mode(std::string_view name) {
  if (name == "all-tokens") return MaskMode::AllTokens;
  if (name == "z-only") return MaskMode::ZOnly;
  if (name == "query-only") return MaskMode::QueryOnly;
  if (name == "y-only") return MaskMode::YOnly;
  throw ConfigError("unknown loss mask '" + std::string(name) + "' (expected all-tokens|z-only|query-only|y-only)");
}

/// Offset of the first context-query token.
inline std::size_t query_start(const EncodedEpisode& ep) {
  return ep.tokens.size() - 3 * ep.y_positions.size() - (ep.z_position ? 1 : 0);
}

/// Token positions (all >= 1) whose token is a prediction target under `mode`.
inline std::vector<std::size_t> active_positions(const EncodedEpisode& ep, MaskMode mode) {
  std::vector<std::size_t> out;
  switch (mode) {
    case MaskMode::AllTokens:
      for (std::size_t p = 1; p < ep.tokens.size(); ++p) out.push_back(p);
      break;
    case MaskMode::ZOnly:
      if (ep.z_position) out.push_back(*ep.z_position);
      break;
    case MaskMode::YOnly:
      out = ep.y_positions;
      break;
    case MaskMode::QueryOnly:
      for (std::size_t p = std::max<std::size_t>(query_start(ep), 1); p < ep.tokens.size(); ++p) out.push_back(p);
      break;
  }
  return out;
}

/// Model input is each episode minus its final token; row b*T + t of the
/// logits is scored against targets[b*T + t] = token t+1 when active.
struct TrainingBatch {
  nn::TokenBatch input;
  std::vector<Token> targets;
  std::vector<std::uint8_t> active;
  std::size_t active_count = 0;
};

inline TrainingBatch make_training_batch(std::span<const EncodedEpisode> episodes, MaskMode mode) {
  if (episodes.empty()) throw ConfigError("empty training batch");
  const std::size_t len = episodes.front().tokens.size();
  if (len < 2) throw ConfigError("episodes are too short to train on");
  TrainingBatch tb;
  const int T = static_cast<int>(len) - 1;
  tb.input = nn::TokenBatch{static_cast<int>(episodes.size()), T, {}};
  tb.input.ids.reserve(episodes.size() * static_cast<std::size_t>(T));
  tb.targets.reserve(episodes.size() * static_cast<std::size_t>(T));
  tb.active.assign(episodes.size() * static_cast<std::size_t>(T), 0);
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    const auto& ep = episodes[b];
    if (ep.tokens.size() != len) throw ConfigError("training batch mixes episode lengths");
    tb.input.ids.insert(tb.input.ids.end(), ep.tokens.begin(), ep.tokens.end() - 1);
    tb.targets.insert(tb.targets.end(), ep.tokens.begin() + 1, ep.tokens.end());
    for (auto p : active_positions(ep, mode)) {
      tb.active[b * static_cast<std::size_t>(T) + p - 1] = 1;
      ++tb.active_count;
    }
  }
  if (tb.active_count == 0) {
    throw ConfigError("loss mask '" + std::string(to_string(mode)) + "' selects no positions in these episodes");
  }
  return tb;
}

/// Mean negative log-likelihood of the targets over active rows. If dlogits is
/// given it receives the gradient of that mean w.r.t. the logits.
template <typename T>
double token_loss(const nn::Matrix<T>& logits, std::span<const Token> targets, std::span<const std::uint8_t> active,
                  nn::Matrix<T>* dlogits = nullptr) {
  const auto rows = logits.rows();
  if (static_cast<std::size_t>(rows) != targets.size() || targets.size() != active.size()) {
    throw ConfigError("logits, targets and mask disagree in length");
  }
  std::size_t count = 0;
  for (auto a : active) count += a ? 1 : 0;
  if (count == 0) throw ConfigError("loss mask selects no positions");
  if (dlogits) dlogits->setZero(rows, logits.cols());
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!active[static_cast<std::size_t>(r)]) continue;
    const auto row = logits.row(r);
    const double mx = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v) sum += std::exp(static_cast<double>(row(v)) - mx);
    const double lse = mx + std::log(sum);
    const Token y = targets[static_cast<std::size_t>(r)];
    total += lse - static_cast<double>(row(y));
    if (dlogits) {
      for (Eigen::Index v = 0; v < row.size(); ++v) {
        (*dlogits)(r, v) = static_cast<T>(std::exp(static_cast<double>(row(v)) - lse) * inv);
      }
      (*dlogits)(r, y) -= static_cast<T>(inv);
    }
  }
  const double loss = total * inv;
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

/// The z-position term and the K per-label terms of one episode's loss.
struct DecomposedLoss {
  std::optional<double> l1;
  std::vector<double> l2;
};

/// `logits` holds the episode's rows only (tokens.size() - 1 of them).
template <typename T>
DecomposedLoss eq1_decomposed_loss(const nn::Matrix<T>& logits, const EncodedEpisode& ep) {
  if (static_cast<std::size_t>(logits.rows()) + 1 != ep.tokens.size()) {
    throw ConfigError("logit rows do not match the episode length");
  }
  const auto nll = [&](std::size_t p) {
    const auto row = logits.row(static_cast<Eigen::Index>(p) - 1);
    const double mx = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v) sum += std::exp(static_cast<double>(row(v)) - mx);
    return mx + std::log(sum) - static_cast<double>(row(ep.tokens[p]));
  };
  DecomposedLoss out;
  if (ep.z_position) out.l1 = nll(*ep.z_position);
  for (auto p : ep.y_positions) out.l2.push_back(nll(p));
  return out;
}

/// lr(e) = peak * min(e / w, sqrt(w / e)) for 1 <= e <= total.
inline double lr_at_epoch(int e, double peak_lr, int warmup = 64, int total = 768) {
  if (warmup < 1 || warmup > total) throw BoundsError("warmup must lie in [1, total]");
  if (e < 1 || e > total) {
    throw BoundsError("epoch " + std::to_string(e) + " outside [1, " + std::to_string(total) + "]");
  }
  if (e <= warmup) return peak_lr * static_cast<double>(e) / static_cast<double>(warmup);
  return peak_lr * std::sqrt(static_cast<double>(warmup) / static_cast<double>(e));
}

/// Warmup horizon kept at the 64/768 ratio of the full schedule.
inline int scaled_warmup(int epochs) { return std::max(1, static_cast<int>(std::lround(64.0 * epochs / 768.0))); }

struct TrainConfig {
  int epochs = 96;
  int batches_per_epoch = 128;
  int batch_size = 16;
  double peak_lr = 1e-3;
  int warmup_epochs = 0;  // 0: scaled_warmup(epochs)
  double weight_decay = 5e-4;
  MaskMode mask = MaskMode::AllTokens;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  int eval_every = 1;
  int eval_episodes = 512;  // per evaluation set and generation
  int checkpoint_every = 1;

  int warmup() const { return warmup_epochs > 0 ? warmup_epochs : scaled_warmup(epochs); }

  void validate() const {
    if (epochs < 1 || batches_per_epoch < 1 || batch_size < 1) throw ConfigError("training sizes must be positive");
    if (warmup_epochs < 0 || warmup() > epochs) throw ConfigError("warmup_epochs must lie in [0, epochs]");
    if (!(peak_lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("rates must be nonnegative");
    if (eval_every < 1 || eval_episodes < 1 || checkpoint_every < 1) throw ConfigError("evaluation cadence must be positive");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batches_per_epoch", c.batches_per_epoch},
                     {"batch_size", c.batch_size},
                     {"peak_lr", c.peak_lr},
                     {"warmup_epochs", c.warmup_epochs},
                     {"weight_decay", c.weight_decay},
                     {"mask", std::string(to_string(c.mask))},
                     {"seeds", c.seeds},
                     {"eval_every", c.eval_every},
                     {"eval_episodes", c.eval_episodes},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.at("epochs").get<int>();
  c.batches_per_epoch = j.at("batches_per_epoch").get<int>();
  c.batch_size = j.value("batch_size", 16);
  c.peak_lr = j.at("peak_lr").get<double>();
  c.warmup_epochs = j.value("warmup_epochs", 0);
  c.weight_decay = j.value("weight_decay", 5e-4);
  c.mask = parse_mask_mode(j.value("mask", std::string("all-tokens")));
  c.seeds = j.value("seeds", std::vector<std::uint64_t>{0, 1, 2, 3});
  c.eval_every = j.value("eval_every", 1);
  c.eval_episodes = j.value("eval_episodes", 512);
  c.checkpoint_every = j.value("checkpoint_every", 1);
}

/// A held-out split evaluated during training: z accuracy on Opt-T episodes
/// and per-position y accuracy on i.i.d. episodes. Either may be absent.
struct EvalSet {
  std::string name;
  std::optional<EpisodeSpec> z_spec;
  std::optional<EpisodeSpec> y_spec;
  int y_every = 1;  // label evaluation cadence in epochs; the final epoch is always evaluated
};

struct TrainJob {
  EpisodeSpec train_spec;
  std::vector<EvalSet> eval_sets;
  nn::ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::string config_hash;
  bool resume = false;
  std::function<void(const std::string&)> log;
};

namespace detail {

/// Episode i uses class i mod |classes|, so every class is covered once
/// before any repeats.
inline std::vector<EncodedEpisode> fixed_episodes(const EpisodeSpec& spec, std::size_t count, const CounterRng& rng) {
  std::vector<EncodedEpisode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    EpisodeSpec one = spec;
    one.classes = spec.classes.subspan(i % spec.classes.size(), 1);
    out.push_back(make_episode(one, rng.split(i)));
  }
  return out;
}

inline void add_report(EpochRecord& rec, const std::string& split, const AccuracyReport& report, bool y, bool z) {
  if (z && report.z_accuracy) rec.metrics[split + "/z_accuracy"] = *report.z_accuracy;
  if (y) {
    double sum = 0.0;
    for (std::size_t k = 0; k < report.per_position_y.size(); ++k) {
      rec.metrics[split + "/y_accuracy@" + std::to_string(k + 1)] = report.per_position_y[k];
      sum += report.per_position_y[k];
    }
    rec.metrics[split + "/y_accuracy"] = sum / static_cast<double>(report.per_position_y.size());
  }
}

}  // namespace detail

inline constexpr const char* kRecordFile = "record.jsonl";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kLatestCheckpoint = "latest.ckpt";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

/// Trains one seed. Batches of epoch e come from CounterRng(seed).split(1, e, b);
/// evaluation episodes are fixed per run. With `resume`, continues after the
/// epoch stored in latest.ckpt and reproduces the uninterrupted record.
template <typename T>
RunRecord train_run(const TrainJob& job) {
  const auto& cfg = job.train;
  cfg.validate();
  const auto vocab = job.train_spec.vocabulary();
  if (job.model.vocab != vocab.size()) {
    throw ConfigError("model vocabulary " + std::to_string(job.model.vocab) + " differs from episode vocabulary " +
                      std::to_string(vocab.size()));
  }
  if (static_cast<std::size_t>(job.model.max_len) + 1 < vocab.episode_length(job.train_spec.context_length)) {
    throw ConfigError("model max_len is shorter than the training episodes");
  }
  std::filesystem::create_directories(job.run_dir / "checkpoints");
  const auto record_path = job.run_dir / kRecordFile;
  const auto latest = job.run_dir / "checkpoints" / kLatestCheckpoint;
  const auto log = [&](const std::string& msg) {
    if (job.log) job.log(msg);
  };

  auto model = nn::make_model<T>(job.model);
  nn::AdamW<T> opt(model->parameters());
  RunRecord record{job.config_hash, job.seed, {}};
  int start_epoch = 1;
  if (job.resume && std::filesystem::exists(latest)) {
    const auto header = nn::load_checkpoint(latest, *model, &opt);
    if (header.extra.value("config_hash", std::string{}) != job.config_hash) {
      throw LoadError("checkpoint '" + latest.string() + "' belongs to a different config");
    }
    const int done = header.extra.at("epoch").template get<int>();
    if (std::filesystem::exists(record_path)) {
      auto previous = read_run_record(record_path);
      for (auto& e : previous.epochs) {
        if (e.epoch <= done) record.epochs.push_back(std::move(e));
      }
    }
    write_run_record(record_path, record);
    start_epoch = done + 1;
    log("resuming after epoch " + std::to_string(done));
  } else {
    std::filesystem::remove(record_path);
  }

  const CounterRng root(job.seed);
  struct PreparedEval {
    std::string name;
    std::vector<EncodedEpisode> z_episodes, y_episodes;
    Vocabulary vocab;
    int y_every = 1;
  };
  std::vector<PreparedEval> evals;
  for (std::size_t s = 0; s < job.eval_sets.size(); ++s) {
    const auto& set = job.eval_sets[s];
    PreparedEval pe{set.name, {}, {}, vocab, set.y_every};
    const auto n = static_cast<std::size_t>(cfg.eval_episodes);
    if (set.z_spec) pe.z_episodes = detail::fixed_episodes(*set.z_spec, n, root.split(2, s, 0));
    if (set.y_spec) pe.y_episodes = detail::fixed_episodes(*set.y_spec, n, root.split(2, s, 1));
    evals.push_back(std::move(pe));
  }

  const std::size_t K = static_cast<std::size_t>(job.train_spec.context_length);
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, cfg.peak_lr, cfg.warmup(), cfg.epochs);
    double loss_sum = 0.0;
    std::vector<double> y_hits(K, 0.0);
    double z_hits = 0.0, z_seen = 0.0, episodes_seen = 0.0;
    nn::Matrix<T> dlogits;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      const auto batch = make_batch(job.train_spec, static_cast<std::size_t>(cfg.batch_size),
                                    root.split(1, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)));
      const auto tb = make_training_batch(batch.episodes, cfg.mask);
      model->zero_grad();
      const auto& logits = model->forward(tb.input);
      loss_sum += token_loss(logits, tb.targets, tb.active, &dlogits);
      const auto Tin = static_cast<Eigen::Index>(tb.input.length);
      for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
        const auto& ep = batch.episodes[i];
        const auto base = static_cast<Eigen::Index>(i) * Tin;
        Eigen::Index arg;
        for (std::size_t k = 0; k < K; ++k) {
          logits.row(base + static_cast<Eigen::Index>(ep.y_positions[k]) - 1).maxCoeff(&arg);
          if (static_cast<Token>(arg) == ep.tokens[ep.y_positions[k]]) y_hits[k] += 1.0;
        }
        if (ep.z_position) {
          logits.row(base + static_cast<Eigen::Index>(*ep.z_position) - 1).maxCoeff(&arg);
          if (static_cast<Token>(arg) == ep.tokens[*ep.z_position]) z_hits += 1.0;
          z_seen += 1.0;
        }
        episodes_seen += 1.0;
      }
      model->backward(dlogits);
      opt.step(model->parameters(), lr, cfg.weight_decay);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.metrics["train/loss"] = loss_sum / cfg.batches_per_epoch;
    rec.metrics["train/lr"] = lr;
    AccuracyReport train_report;
    for (double h : y_hits) train_report.per_position_y.push_back(h / episodes_seen);
    if (z_seen > 0) train_report.z_accuracy = z_hits / z_seen;
    detail::add_report(rec, "train", train_report, true, true);

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      for (const auto& pe : evals) {
        if (!pe.z_episodes.empty()) {
          detail::add_report(rec, pe.name, eval_model(*model, pe.z_episodes, pe.vocab), false, true);
        }
        if (!pe.y_episodes.empty() && (epoch % pe.y_every == 0 || epoch == cfg.epochs)) {
          detail::add_report(rec, pe.name, eval_model(*model, pe.y_episodes, pe.vocab), true, false);
        }
      }
    }
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
      const nlohmann::json extra{{"epoch", epoch}, {"config_hash", job.config_hash}, {"seed", job.seed}};
      nn::save_checkpoint(latest, *model, extra, &opt);
      rec.checkpoint = (std::filesystem::path("checkpoints") / kLatestCheckpoint).string();
    }
    append_epoch(record_path, rec, record);
    record.epochs.push_back(rec);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string line = "epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) +
                       " loss=" + std::to_string(rec.metrics["train/loss"]) + " lr=" + std::to_string(lr);
    for (const auto& [key, value] : rec.metrics) {
      if (key.ends_with("/z_accuracy") || key.ends_with("/y_accuracy")) line += " " + key + "=" + std::to_string(value);
    }
    log(line + " (" + std::to_string(secs) + " s)");
  }
  const nlohmann::json extra{{"epoch", cfg.epochs}, {"config_hash", job.config_hash}, {"seed", job.seed}};
  nn::save_checkpoint(job.run_dir / "checkpoints" / kFinalCheckpoint, *model, extra);
  write_metrics_csv(job.run_dir / kMetricsFile, {record});
  return record;
}

}  // namespace iclhcg
