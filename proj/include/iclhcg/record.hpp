#pragma once

// Per-epoch metric records. A RunRecord is persisted as one JSON object per
// line (append-only) with a CSV projection `epoch,split,metric,value,seed`.
// Metric keys are "<split>/<metric>", e.g. "test/z_accuracy".

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/error.hpp"

namespace iclhcg {

struct EpochRecord {
  int epoch = 0;
  std::map<std::string, double> metrics;
  std::string checkpoint;  // empty when none was written this epoch

  double at(const std::string& key) const {
    const auto it = metrics.find(key);
    if (it == metrics.end()) throw ConfigError("epoch record has no metric '" + key + "'");
    return it->second;
  }

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

inline nlohmann::json epoch_to_json(const EpochRecord& e, const RunRecord& run) {
  nlohmann::json j{{"epoch", e.epoch}, {"seed", run.seed}, {"config_hash", run.config_hash}, {"metrics", e.metrics}};
  if (!e.checkpoint.empty()) j["checkpoint"] = e.checkpoint;
  return j;
}

inline void append_epoch(const std::filesystem::path& path, const EpochRecord& e, const RunRecord& run) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw LoadError("cannot append to '" + path.string() + "'");
  out << epoch_to_json(e, run).dump() << '\n';
}

inline RunRecord read_run_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open run record '" + path.string() + "'");
  RunRecord run;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError("malformed line in '" + path.string() + "': " + ex.what());
    }
    if (first) {
      run.config_hash = j.at("config_hash").get<std::string>();
      run.seed = j.at("seed").get<std::uint64_t>();
      first = false;
    }
    EpochRecord e;
    e.epoch = j.at("epoch").get<int>();
    e.metrics = j.at("metrics").get<std::map<std::string, double>>();
    e.checkpoint = j.value("checkpoint", std::string{});
    run.epochs.push_back(std::move(e));
  }
  return run;
}

inline void write_run_record(const std::filesystem::path& path, const RunRecord& run) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  for (const auto& e : run.epochs) out << epoch_to_json(e, run).dump() << '\n';
}

/// Long-format CSV. The leading comment line carries the config hash.
inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  if (!runs.empty()) out << "# config_hash=" << runs.front().config_hash << '\n';
  out << "epoch,split,metric,value,seed\n";
  out.precision(9);
  for (const auto& run : runs) {
    for (const auto& e : run.epochs) {
      for (const auto& [key, value] : e.metrics) {
        const auto slash = key.find('/');
        const std::string split = slash == std::string::npos ? "" : key.substr(0, slash);
        const std::string metric = slash == std::string::npos ? key : key.substr(slash + 1);
        out << e.epoch << ',' << split << ',' << metric << ',' << value << ',' << run.seed << '\n';
      }
    }
  }
}

}  // namespace iclhcg
