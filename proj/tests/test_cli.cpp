#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iclhcg/config.hpp"

namespace fs = std::filesystem;
using namespace iclhcg;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Result run(const std::string& args) {
  const char* cli = std::getenv("ICLHCG_CLI");
  REQUIRE(cli != nullptr);
  const std::string cmd = std::string(cli) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json tiny_config(const std::string& arch = "transformer") {
  auto j = nlohmann::json::parse(R"({
    "version": 1,
    "name": "tiny",
    "setup": {"kind": "id-class", "n": 3, "id_pool_size": 4, "ood_pool_size": 4,
              "train_sizes": [2], "test_sizes": [2], "train_count": 4, "test_count": 2},
    "episode": {"K": 3, "L": 2},
    "model": {"arch": "transformer", "layers": 1, "hidden": 8, "heads": 2},
    "train": {"epochs": 2, "batches_per_epoch": 2, "peak_lr": 0.001, "seeds": [0]}
  })");
  j["model"]["arch"] = arch;
  return j;
}

// A scratch directory removed on scope exit.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("iclhcg-cli-" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path write(const std::string& file, const nlohmann::json& j) const {
    std::ofstream(dir / file) << j.dump(2);
    return dir / file;
  }
};

}  // namespace

TEST_CASE("usage and configuration errors exit with 2", "[cli]") {
  Scratch s("usage");
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("gen-data --config " + (s.dir / "absent.json").string() + " --out " + s.dir.string()).code == 2);

  auto cfg = tiny_config();
  cfg["setup"].erase("n");
  const auto bad = s.write("bad.json", cfg);
  const auto r = run("gen-data --config " + bad.string() + " --out " + (s.dir / "d").string());
  CHECK(r.code == 2);
  CHECK(r.out.find("missing field 'setup.n'") != std::string::npos);

  const auto unknown = run("experiment e9");
  CHECK(unknown.code == 2);
  CHECK(unknown.out.find("e1-id-class") != std::string::npos);
}

TEST_CASE("gen-data is byte-identical per seed", "[cli]") {
  Scratch s("gen");
  const auto cfg = s.write("c.json", tiny_config());
  const auto a = run("gen-data --config " + cfg.string() + " --out " + (s.dir / "a").string() + " --count 50");
  const auto b = run("gen-data --config " + cfg.string() + " --out " + (s.dir / "b").string() + " --count 50");
  const auto c = run("gen-data --config " + cfg.string() + " --out " + (s.dir / "c").string() + " --count 50 --seed 3");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  REQUIRE(c.code == 0);
  CHECK(slurp(s.dir / "a" / "episodes.bin") == slurp(s.dir / "b" / "episodes.bin"));
  CHECK(slurp(s.dir / "a" / "manifest.json") == slurp(s.dir / "b" / "manifest.json"));
  CHECK(slurp(s.dir / "a" / "episodes.bin") != slurp(s.dir / "c" / "episodes.bin"));
  const auto manifest = nlohmann::json::parse(slurp(s.dir / "a" / "manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(parse_run_config(tiny_config())));
  CHECK(manifest["train_classes"] == 4);
  CHECK(manifest["test_classes"] == 2);
  CHECK(run("gen-data --config " + cfg.string() + " --out " + (s.dir / "d").string() + " --split dev").code == 2);
}

TEST_CASE("gen-data reports the id-class preset class counts", "[cli]") {
  Scratch s("preset");
  const auto dump = run("experiment e1-id-class --dump-config");
  REQUIRE(dump.code == 0);
  const auto body = dump.out.substr(dump.out.find('{'));
  const auto cfg = s.write("e1.json", nlohmann::json::parse(body));
  const auto r = run("gen-data --config " + cfg.string() + " --out " + (s.dir / "d").string() + " --count 4");
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(slurp(s.dir / "d" / "manifest.json"));
  CHECK(manifest["train_classes"] == 12358);
  CHECK(manifest["test_classes"] == 512);
}

TEST_CASE("train refuses to clobber, resumes, and eval checks the model", "[cli]") {
  Scratch s("train");
  const auto cfg = s.write("c.json", tiny_config());
  const auto out = s.dir / "run";
  const auto first = run("train --config " + cfg.string() + " --out " + out.string());
  REQUIRE(first.code == 0);
  const auto record = out / "seed-0" / "record.jsonl";
  REQUIRE(fs::exists(record));
  CHECK(fs::exists(out / "seed-0" / "checkpoints" / "final.ckpt"));
  CHECK(slurp(out / "aggregate.csv").starts_with("# config_hash=" + config_hash(parse_run_config(tiny_config()))));

  const auto again = run("train --config " + cfg.string() + " --out " + out.string());
  CHECK(again.code == 2);
  CHECK(again.out.find("--force") != std::string::npos);
  const auto before = slurp(record);
  CHECK(run("train --config " + cfg.string() + " --out " + out.string() + " --resume").code == 0);
  CHECK(slurp(record) == before);
  CHECK(run("train --config " + cfg.string() + " --out " + out.string() + " --force").code == 0);
  CHECK(slurp(record) == before);

  const auto ckpt = (out / "seed-0" / "checkpoints" / "final.ckpt").string();
  const auto ev = run("eval --checkpoint " + ckpt + " --config " + cfg.string() +
                      " --generation opt-t --oracle --episodes 64 --positions 1,3");
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("position,k,accuracy,seed,split") != std::string::npos);
  CHECK(ev.out.find("\n2,1,0,test/oracle\n") != std::string::npos);

  const auto csv_dir = s.dir / "eval";
  REQUIRE(run("eval --checkpoint " + ckpt + " --config " + cfg.string() + " --oracle --episodes 32 --out " +
              csv_dir.string())
              .code == 0);
  const auto ident = slurp(csv_dir / "identification.csv");
  CHECK(ident.starts_with("# config_hash="));
  CHECK(ident.find("epoch,z_accuracy,seed,split\n2,") != std::string::npos);
  CHECK(ident.find(",1,0,test/oracle\n") != std::string::npos);

  CHECK(run("eval --checkpoint " + ckpt + " --config " + cfg.string() + " --positions 4").code == 2);
  CHECK(run("eval --checkpoint " + ckpt + " --config " + cfg.string() + " --split test-size9").code == 2);

  const auto lstm = s.write("lstm.json", tiny_config("lstm"));
  const auto mismatch = run("eval --checkpoint " + ckpt + " --config " + lstm.string());
  CHECK(mismatch.code == 2);
  CHECK(mismatch.out.find("does not match") != std::string::npos);

  std::ofstream(s.dir / "junk.ckpt") << "not a checkpoint";
  CHECK(run("eval --checkpoint " + (s.dir / "junk.ckpt").string() + " --config " + cfg.string()).code == 1);
}

TEST_CASE("experiment lists and dumps presets", "[cli]") {
  const auto list = run("experiment --list");
  REQUIRE(list.code == 0);
  for (const char* name : {"e1-id-class", "e2-ood-class", "e3-size", "e4-arch", "e5-class-count", "e6-imbalance",
                           "e7-instruction", "e8-diversity"}) {
    CHECK(list.out.find(name) != std::string::npos);
  }
  const auto dump = run("experiment e6-imbalance --dump-config --arms D4");
  REQUIRE(dump.code == 0);
  CHECK(dump.out.find("ab75a941f5a22236") != std::string::npos);
  CHECK(dump.out.find("# D4") != std::string::npos);
  CHECK(run("experiment e6-imbalance --dump-config --arms D3").code == 2);
  CHECK(run("experiment e1-id-class --dump-config --scale 3").code == 2);
}
