// Command-line front end: gen-data, train, eval, experiment.
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/config.hpp"
#include "iclhcg/eval.hpp"
#include "iclhcg/nn/checkpoint.hpp"
#include "iclhcg/presets.hpp"
#include "iclhcg/runner.hpp"

namespace fs = std::filesystem;
using namespace iclhcg;

namespace {

struct GenDataArgs {
  std::string config, out, split = "test", generation = "iid";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t count = 1024;
};

struct TrainArgs {
  std::string config, out;
  std::vector<std::uint64_t> seeds;
  bool resume = false, force = false;
};

struct EvalArgs {
  std::string checkpoint, config, out, split = "test", generation = "opt-t";
  std::vector<int> positions;
  std::size_t episodes = 512;
  std::uint64_t episode_seed = 0;
  bool oracle = false, z_index_only = false;
};

struct ExperimentArgs {
  std::string name, out = "runs", scale = "1/64";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> arms;
  bool list = false, dump = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  const auto cfg = load_run_config(a.config);
  const auto seed = a.seed_set ? a.seed : cfg.train.seeds.front();
  const auto setup = build_generalization_setup(params_for_seed(cfg, seed));
  const Split split = a.split == "train" ? Split::Train : a.split == "test" ? Split::Test
                                                                            : throw ConfigError("--split must be train or test");
  auto spec = make_episode_spec(setup, split, cfg.K, cfg.L, parse_generation(a.generation), cfg.distribution());
  if (a.count == 0) throw ConfigError("--count must be positive");
  std::vector<EncodedEpisode> episodes;
  episodes.reserve(a.count);
  const CounterRng root = CounterRng(seed).split(4);
  for (std::size_t i = 0; i < a.count; ++i) episodes.push_back(make_episode(spec, root.split(i)));

  fs::create_directories(a.out);
  {
    std::ofstream bin(fs::path(a.out) / "episodes.bin", std::ios::binary | std::ios::trunc);
    write_episodes(bin, spec.vocabulary(), cfg.K, episodes);
    if (!bin) throw LoadError("failed to write episodes.bin");
  }
  const nlohmann::json manifest{{"config_hash", config_hash(cfg)},
                                {"config", to_json(cfg)},
                                {"seed", seed},
                                {"split", a.split},
                                {"generation", a.generation},
                                {"count", a.count},
                                {"n", cfg.setup.n},
                                {"K", cfg.K},
                                {"L", cfg.L},
                                {"vocab_size", spec.vocabulary().size()},
                                {"train_classes", setup.train_classes.size()},
                                {"test_classes", setup.test_classes.size()},
                                {"episodes_file", "episodes.bin"}};
  std::ofstream(fs::path(a.out) / "manifest.json") << manifest.dump(2) << '\n';
  std::cout << "wrote " << a.count << " episodes; " << setup.train_classes.size() << " train / "
            << setup.test_classes.size() << " test classes\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  auto cfg = load_run_config(a.config);
  if (!a.seeds.empty()) cfg.train.seeds = a.seeds;
  const fs::path out(a.out);
  for (auto seed : cfg.train.seeds) {
    const auto dir = out / ("seed-" + std::to_string(seed));
    if (fs::exists(dir / kRecordFile) && !a.resume && !a.force) {
      throw ConfigError("output directory '" + dir.string() + "' already holds a run; pass --resume or --force");
    }
    if (a.force && !a.resume) fs::remove_all(dir);
  }
  std::vector<RunRecord> runs;
  for (auto seed : cfg.train.seeds) {
    runs.push_back(execute_run(cfg, seed, out / ("seed-" + std::to_string(seed)), a.resume));
  }
  write_metrics_csv(out / kMetricsFile, runs);
  std::vector<AggregateCurve> curves;
  for (const auto& [key, value] : runs.front().epochs.back().metrics) curves.push_back(aggregate_runs(runs, key));
  write_aggregate_csv(out / "aggregate.csv", curves);
  for (const auto& c : curves) {
    if (c.points.empty()) continue;
    const auto& p = c.points.back();
    std::cout << c.metric << " @" << p.epoch << ": mean " << p.mean << " [" << p.min << ", " << p.max << "]\n";
  }
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto cfg = load_run_config(a.config);
  const auto header = nn::read_checkpoint_header(a.checkpoint);
  const auto seed = header.extra.value("seed", header.config.init_seed);
  const auto expected = cfg.model_for_seed(header.config.init_seed);
  if (!(header.config == expected)) {
    throw ConfigError("checkpoint model " + nlohmann::json(header.config).dump() + " does not match config model " +
                      nlohmann::json(expected).dump());
  }
  auto model = nn::load_model<float>(a.checkpoint, &expected);

  PreparedRun run;
  prepare_run(run, cfg, seed, fs::path(a.checkpoint).parent_path());
  const auto it = std::find_if(run.groups.begin(), run.groups.end(), [&](const auto& g) { return g.first == a.split; });
  if (it == run.groups.end()) {
    std::string names;
    for (const auto& g : run.groups) names += (names.empty() ? "" : ", ") + g.first;
    throw ConfigError("unknown split '" + a.split + "'; available: " + names);
  }
  EpisodeSpec spec = run.job.train_spec;
  spec.classes = it->second;
  spec.generation = parse_generation(a.generation);
  if (a.episodes == 0) throw ConfigError("--episodes must be positive");
  std::vector<EncodedEpisode> episodes;
  const CounterRng root = CounterRng(a.episode_seed).split(5);
  for (std::size_t i = 0; i < a.episodes; ++i) {
    EpisodeSpec one = spec;
    one.classes = spec.classes.subspan(i % spec.classes.size(), 1);
    episodes.push_back(make_episode(one, root.split(i)));
  }
  EvalOptions opts;
  opts.z_index_only = a.z_index_only;
  const auto report = eval_model(*model, episodes, spec.vocabulary(), opts);

  std::vector<int> ks = a.positions;
  if (ks.empty()) {
    for (int k = 1; k <= cfg.K; ++k) ks.push_back(k);
  }
  for (int k : ks) {
    if (k < 1 || k > cfg.K) throw ConfigError("position " + std::to_string(k) + " outside 1.." + std::to_string(cfg.K));
  }
  std::vector<EpisodeTruth> truths;
  for (const auto& ep : episodes) truths.push_back(ep.truth);
  std::vector<double> oracle_y;
  std::optional<double> oracle_z;
  if (a.oracle) {
    oracle_y = oracle_label_accuracy(truths);
    if (cfg.L > 0) oracle_z = oracle_identification(truths, spec.generation == Generation::OptT);
  }

  const int epoch = header.extra.value("epoch", 0);
  std::ostringstream labels, ident;
  labels.precision(9);
  ident.precision(9);
  labels << "position,k,accuracy,seed,split\n";
  ident << "epoch,z_accuracy,seed,split\n";
  const auto& y_pos = episodes.front().y_positions;
  for (int k : ks) {
    const auto i = static_cast<std::size_t>(k - 1);
    labels << y_pos[i] << ',' << k << ',' << report.per_position_y[i] << ',' << seed << ',' << a.split << '\n';
  }
  if (a.oracle) {
    for (int k : ks) {
      const auto i = static_cast<std::size_t>(k - 1);
      labels << y_pos[i] << ',' << k << ',' << oracle_y[i] << ',' << seed << ',' << a.split << "/oracle\n";
    }
  }
  if (report.z_accuracy) ident << epoch << ',' << *report.z_accuracy << ',' << seed << ',' << a.split << '\n';
  if (oracle_z) ident << epoch << ',' << *oracle_z << ',' << seed << ',' << a.split << "/oracle\n";

  if (a.out.empty()) {
    std::cout << labels.str() << '\n' << ident.str();
  } else {
    fs::create_directories(a.out);
    const auto hash_line = "# config_hash=" + config_hash(cfg) + "\n";
    std::ofstream(fs::path(a.out) / "labels.csv") << hash_line << labels.str();
    std::ofstream(fs::path(a.out) / "identification.csv") << hash_line << ident.str();
    std::cout << "wrote " << (fs::path(a.out) / "labels.csv").string() << " and identification.csv\n";
  }
  return 0;
}

int cmd_experiment(const ExperimentArgs& a) {
  if (a.list || a.name.empty()) {
    for (const auto& n : preset_names()) std::cout << n << "  " << make_preset(n, 1.0 / 64).description << '\n';
    return a.list ? 0 : 2;
  }
  const double scale = parse_scale(a.scale);
  auto preset = make_preset(a.name, scale);
  if (!a.arms.empty()) {
    std::vector<ExperimentArm> kept;
    for (const auto& label : a.arms) {
      const auto it = std::find_if(preset.arms.begin(), preset.arms.end(), [&](const auto& arm) { return arm.label == label; });
      if (it == preset.arms.end()) throw ConfigError("preset " + preset.name + " has no arm '" + label + "'");
      kept.push_back(*it);
    }
    preset.arms = std::move(kept);
  }
  if (a.dump) {
    for (const auto& arm : preset.arms) {
      auto j = to_json(arm.config);
      j["config_hash"] = config_hash(arm.config);
      std::cout << "# " << arm.label << '\n' << j.dump(2) << '\n';
    }
    return 0;
  }
  const auto results = run_experiment(preset, a.out, a.seeds.empty() ? nullptr : &a.seeds);
  std::cout << "summary: " << (fs::path(a.out) / preset.name / "summary.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning experiments on in-context hypothesis-class tasks"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "write an episode dump and manifest");
  g->add_option("--config", gen.config, "run config JSON")->required();
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--split", gen.split, "train|test");
  g->add_option("--generation", gen.generation, "iid|opt-t");
  g->add_option("--count", gen.count, "number of episodes");
  g->add_option("--seed", gen.seed, "setup and episode seed (default: first config seed)")
      ->each([&](const std::string&) { gen.seed_set = true; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train every seed of a config");
  t->add_option("--config", tr.config, "run config JSON")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--seeds", tr.seeds, "override config seeds")->delimiter(',');
  t->add_flag("--resume", tr.resume, "continue from the latest checkpoints");
  t->add_flag("--force", tr.force, "overwrite existing runs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--config", ev.config, "run config JSON")->required();
  e->add_option("--generation", ev.generation, "iid|opt-t");
  e->add_option("--split", ev.split, "evaluation split, e.g. test, test-ood-class, test-size4");
  e->add_option("--positions", ev.positions, "context positions k to report")->delimiter(',');
  e->add_option("--episodes", ev.episodes, "number of episodes");
  e->add_option("--episode-seed", ev.episode_seed, "seed for episode sampling");
  e->add_option("--out", ev.out, "directory for labels.csv and identification.csv (default: stdout)");
  e->add_flag("--oracle", ev.oracle, "add version-space oracle rows");
  e->add_flag("--z-index-only", ev.z_index_only, "restrict the z argmax to index tokens");

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "run a named preset grid");
  x->add_option("name", ex.name, "preset name");
  x->add_option("--scale", ex.scale, "fraction of the full schedule, e.g. 1/64");
  x->add_option("--out", ex.out, "runs root directory");
  x->add_option("--seeds", ex.seeds, "override preset seeds")->delimiter(',');
  x->add_option("--arms", ex.arms, "run only these arms")->delimiter(',');
  x->add_flag("--list", ex.list, "list presets");
  x->add_flag("--dump-config", ex.dump, "print arm configs and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*x) return cmd_experiment(ex);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
