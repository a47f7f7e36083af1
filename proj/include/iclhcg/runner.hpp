#pragma once

// Run directories and experiment execution. Runs are content-addressed:
// <root>/<config hash>/seed-<s>/ holds config.json, record.jsonl,
// metrics.csv, log.txt and checkpoints/, so presets that share a config
// (e.g. the D=1 imbalance arm and the ID-class run) share their runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "iclhcg/config.hpp"
#include "iclhcg/eval.hpp"
#include "iclhcg/presets.hpp"
#include "iclhcg/train.hpp"

namespace iclhcg {

inline std::filesystem::path run_directory(const std::filesystem::path& root, const RunConfig& c, std::uint64_t seed) {
  return root / config_hash(c) / ("seed-" + std::to_string(seed));
}

/// True when the directory holds a finished run of exactly this config.
inline bool run_complete(const std::filesystem::path& dir, const RunConfig& c) {
  if (!std::filesystem::exists(dir / "checkpoints" / kFinalCheckpoint)) return false;
  if (!std::filesystem::exists(dir / kRecordFile)) return false;
  const auto record = read_run_record(dir / kRecordFile);
  return record.config_hash == config_hash(c) && !record.epochs.empty() &&
         record.epochs.back().epoch == c.train.epochs;
}

/// Everything a training job points into; must outlive the job.
struct PreparedRun {
  RunSetups setups;
  std::vector<std::pair<std::string, std::vector<HypothesisClass>>> groups;
  TrainJob job;
};

inline void prepare_run(PreparedRun& out, const RunConfig& c, std::uint64_t seed, const std::filesystem::path& dir) {
  out.setups = build_run_setups(c, seed);
  out.groups.clear();
  for (auto& g : eval_groups(out.setups.primary, "test")) out.groups.push_back(std::move(g));
  for (std::size_t i = 0; i < out.setups.companions.size(); ++i) {
    const auto& s = out.setups.companions[i];
    for (auto& g : eval_groups(s, split_name(c.setup.kind, s.kind))) out.groups.push_back(std::move(g));
  }
  const auto dist = c.distribution();
  auto& job = out.job;
  job.train_spec = make_episode_spec(out.setups.primary, Split::Train, c.K, c.L, Generation::Iid, dist);
  job.eval_sets.clear();
  for (const auto& [name, classes] : out.groups) {
    EvalSet set;
    set.name = name;
    EpisodeSpec spec = job.train_spec;
    spec.classes = classes;
    if (c.eval.identification && c.L > 0) {
      bool identifiable = true;
      for (const auto& cls : classes) identifiable &= cls.size() > 1;
      if (identifiable) {
        set.z_spec = spec;
        set.z_spec->generation = Generation::OptT;
      }
    }
    if (c.eval.labels) set.y_spec = spec;
    set.y_every = c.eval.label_every;
    job.eval_sets.push_back(std::move(set));
  }
  job.model = c.model_for_seed(seed);
  job.train = c.train;
  job.seed = seed;
  job.run_dir = dir;
  job.config_hash = config_hash(c);
}

/// Trains (or resumes) one seed and snapshots the config next to the record.
inline RunRecord execute_run(const RunConfig& c, std::uint64_t seed, const std::filesystem::path& dir, bool resume,
                             bool echo = true) {
  std::filesystem::create_directories(dir);
  {
    auto snapshot = to_json(c);
    snapshot["train"]["seeds"] = {seed};
    snapshot["config_hash"] = config_hash(c);
    std::ofstream(dir / "config.json") << snapshot.dump(2) << '\n';
  }
  PreparedRun run;
  prepare_run(run, c, seed, dir);
  std::ofstream log_file(dir / "log.txt", resume ? std::ios::app : std::ios::trunc);
  const std::string tag = "[" + c.name + " " + config_hash(c).substr(0, 8) + " seed " + std::to_string(seed) + "] ";
  run.job.resume = resume;
  run.job.log = [&](const std::string& line) {
    log_file << line << std::endl;
    if (echo) std::cerr << tag << line << std::endl;
  };
  return train_run<float>(run.job);
}

/// Returns the finished record, training only if needed.
inline RunRecord ensure_run(const std::filesystem::path& root, const RunConfig& c, std::uint64_t seed,
                            bool echo = true) {
  const auto dir = run_directory(root, c, seed);
  if (run_complete(dir, c)) return read_run_record(dir / kRecordFile);
  return execute_run(c, seed, dir, true, echo);
}

/// Runs every arm and seed, then writes <out>/<preset>/summary.csv with
/// mean/min/max curves of every metric per arm.
inline std::map<std::string, std::vector<RunRecord>> run_experiment(const ExperimentPreset& preset,
                                                                    const std::filesystem::path& out,
                                                                    const std::vector<std::uint64_t>* seeds = nullptr,
                                                                    bool echo = true) {
  std::map<std::string, std::vector<RunRecord>> results;
  for (const auto& arm : preset.arms) {
    const auto& use = seeds ? *seeds : arm.config.train.seeds;
    for (auto seed : use) results[arm.label].push_back(ensure_run(out, arm.config, seed, echo));
  }
  const auto dir = out / preset.name;
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "summary.csv");
  csv << "arm,config_hash,epoch,metric,mean,min,max,seeds\n";
  csv.precision(9);
  for (const auto& arm : preset.arms) {
    const auto& runs = results[arm.label];
    if (runs.empty()) continue;
    std::vector<std::string> metrics;
    for (const auto& [key, value] : runs.front().epochs.back().metrics) metrics.push_back(key);
    for (const auto& m : metrics) {
      const auto curve = aggregate_runs(runs, m);
      for (const auto& p : curve.points) {
        csv << arm.label << ',' << curve.config_hash << ',' << p.epoch << ',' << m << ',' << p.mean << ',' << p.min
            << ',' << p.max << ',' << p.per_seed.size() << '\n';
      }
    }
  }
  return results;
}

}  // namespace iclhcg
