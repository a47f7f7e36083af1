#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "iclhcg/train.hpp"

using namespace iclhcg;

namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::vector<HypothesisClass> classes{HypothesisClass(3, {1, 2, 4}), HypothesisClass(3, {0, 7}),
                                       HypothesisClass(3, {3, 5, 6})};
  EpisodeSpec spec;

  Fixture(int K = 4, int L = 3) {
    spec.classes = classes;
    spec.n = 3;
    spec.context_length = K;
    spec.prefix_slots = L;
    spec.distribution = uniform_distribution(3);
  }

  nn::ModelConfig model(nn::Arch arch = nn::Arch::Transformer) const {
    nn::ModelConfig c;
    c.arch = arch;
    c.layers = 1;
    c.hidden = 16;
    c.heads = 2;
    c.vocab = spec.vocabulary().size();
    c.max_len = static_cast<int>(spec.vocabulary().episode_length(spec.context_length)) - 1;
    c.ssm_state = 4;
    return c;
  }
};

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("iclhcg-test-train-" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("learning-rate schedule", "[train]") {
  const double peak = 3e-4;
  CHECK(lr_at_epoch(1, peak) == Catch::Approx(peak / 64).epsilon(1e-12));
  CHECK(lr_at_epoch(64, peak) == Catch::Approx(peak).epsilon(1e-12));
  CHECK(lr_at_epoch(256, peak) == Catch::Approx(peak / 2).epsilon(1e-12));
  CHECK(lr_at_epoch(768, peak) == Catch::Approx(peak * std::sqrt(64.0 / 768.0)).epsilon(1e-12));
  for (int e = 2; e <= 768; ++e) {
    const double prev = lr_at_epoch(e - 1, peak), cur = lr_at_epoch(e, peak);
    if (e <= 64) {
      REQUIRE(cur > prev);
    } else {
      REQUIRE(cur < prev);
    }
    REQUIRE(std::abs(cur - prev) <= peak / 64 + 1e-15);
  }
  CHECK(scaled_warmup(768) == 64);
  CHECK(scaled_warmup(96) == 8);
  CHECK(scaled_warmup(3) == 1);
  CHECK_THROWS_AS(lr_at_epoch(0, peak), BoundsError);
  CHECK_THROWS_AS(lr_at_epoch(769, peak), BoundsError);
  CHECK_THROWS_AS(lr_at_epoch(5, peak, 10, 8), BoundsError);
}

TEST_CASE("loss masks select the documented positions", "[train]") {
  CounterRng gen(1);
  for (int K : {1, 3, 6}) {
    for (int L : {0, 3, 5}) {
      Fixture f(K, L);
      const auto ep = make_episode(f.spec, gen.split(static_cast<std::uint64_t>(K * 10 + L)));
      const auto T = ep.tokens.size();
      CHECK(active_positions(ep, MaskMode::AllTokens).size() == T - 1);
      CHECK(active_positions(ep, MaskMode::YOnly) == ep.y_positions);
      CHECK(active_positions(ep, MaskMode::ZOnly).size() == (L > 0 ? 1u : 0u));
      // The query starts at position 0 without a prefix, which is never a target.
      CHECK(active_positions(ep, MaskMode::QueryOnly).size() ==
            static_cast<std::size_t>(L > 0 ? 3 * K + 1 : 3 * K - 1));
      CHECK(query_start(ep) == static_cast<std::size_t>(L * (3 * 3 + 2)));
      for (auto mode : {MaskMode::AllTokens, MaskMode::ZOnly, MaskMode::QueryOnly, MaskMode::YOnly}) {
        for (auto p : active_positions(ep, mode)) CHECK(p >= 1);
      }
    }
  }
  Fixture bare(3, 0);
  const auto ep = make_episode(bare.spec, CounterRng(2));
  CHECK_THROWS_AS(make_training_batch(std::span(&ep, 1), MaskMode::ZOnly), ConfigError);
  CHECK_THROWS_AS(make_training_batch({}, MaskMode::AllTokens), ConfigError);
  CHECK_THROWS_AS(parse_mask_mode("everything"), ConfigError);
}

TEST_CASE("training batch shifts targets by one token", "[train]") {
  Fixture f;
  const auto batch = make_batch(f.spec, 3, CounterRng(3));
  const auto tb = make_training_batch(batch.episodes, MaskMode::YOnly);
  const auto T = static_cast<std::size_t>(tb.input.length);
  REQUIRE(T + 1 == batch.episodes[0].tokens.size());
  CHECK(tb.active_count == 3 * 4);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      CHECK(tb.input.ids[b * T + t] == batch.episodes[b].tokens[t]);
      CHECK(tb.targets[b * T + t] == batch.episodes[b].tokens[t + 1]);
    }
  }
}

TEST_CASE("token loss of uniform logits is log V", "[train]") {
  const int V = 11;
  nn::Matrix<double> logits = nn::Matrix<double>::Constant(5, V, 0.3);
  const std::vector<Token> targets{0, 3, 10, 2, 2};
  const std::vector<std::uint8_t> active{1, 0, 1, 1, 0};
  nn::Matrix<double> d;
  CHECK(token_loss(logits, targets, active, &d) == Catch::Approx(std::log(V)).epsilon(1e-12));
  CHECK(d.row(1).isZero());
  CHECK(d(0, 0) == Catch::Approx((1.0 / V - 1.0) / 3.0));
  CHECK(d(0, 1) == Catch::Approx(1.0 / V / 3.0));

  const std::vector<std::uint8_t> none(5, 0);
  CHECK_THROWS_AS(token_loss(logits, targets, none), ConfigError);
  logits(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(token_loss(logits, targets, active), NumericError);
}

TEST_CASE("token loss gradient matches central differences", "[train]") {
  CounterRng rng(4);
  nn::Matrix<double> logits(6, 7);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 3.0 * rng.normal();
  const std::vector<Token> targets{1, 6, 0, 2, 5, 3};
  const std::vector<std::uint8_t> active{1, 1, 0, 1, 1, 1};
  nn::Matrix<double> d;
  token_loss(logits, targets, active, &d);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    auto plus = logits, minus = logits;
    plus.data()[i] += h;
    minus.data()[i] -= h;
    const double fd = (token_loss(plus, targets, active) - token_loss(minus, targets, active)) / (2 * h);
    REQUIRE(d.data()[i] == Catch::Approx(fd).margin(1e-8));
  }
}

TEST_CASE("index and label terms decompose the masked losses", "[train]") {
  Fixture f;
  const auto ep = make_episode(f.spec, CounterRng(5));
  auto model = nn::make_model<double>(f.model());
  const auto tb_z = make_training_batch(std::span(&ep, 1), MaskMode::ZOnly);
  const auto tb_y = make_training_batch(std::span(&ep, 1), MaskMode::YOnly);
  const auto logits = model->forward(tb_z.input);
  const auto parts = eq1_decomposed_loss(logits, ep);
  REQUIRE(parts.l1.has_value());
  REQUIRE(parts.l2.size() == 4);
  CHECK(token_loss(logits, tb_z.targets, tb_z.active) == Catch::Approx(*parts.l1).epsilon(1e-12));
  double mean = 0.0;
  for (double v : parts.l2) mean += v / 4.0;
  CHECK(token_loss(logits, tb_y.targets, tb_y.active) == Catch::Approx(mean).epsilon(1e-12));
  CHECK_THROWS_AS(eq1_decomposed_loss(nn::Matrix<double>(logits.topRows(3)), ep), ConfigError);
}

TEST_CASE("AdamW first step, decay and convergence", "[train][optim]") {
  nn::ParameterSet<double> params;
  auto& p = params.add("w", 1, 3);
  p.value << 1.0, -2.0, 0.5;
  nn::AdamW<double> opt(params);

  // Zero gradient: only the decoupled decay acts.
  p.grad.setZero();
  opt.step(params, 0.1, 0.01);
  CHECK(p.value(0, 0) == Catch::Approx(1.0 * (1 - 0.001)).epsilon(1e-14));

  // Bias correction makes the first nonzero-gradient step lr * g / |g| up to eps.
  nn::ParameterSet<double> fresh;
  auto& q = fresh.add("w", 1, 2);
  q.value << 0.0, 0.0;
  q.grad << 4.0, -0.25;
  nn::AdamW<double> opt2(fresh);
  opt2.step(fresh, 0.01, 0.0);
  CHECK(q.value(0, 0) == Catch::Approx(-0.01).epsilon(1e-6));
  CHECK(q.value(0, 1) == Catch::Approx(0.01).epsilon(1e-6));
  CHECK(opt2.steps() == 1);

  // Minimizes a separable quadratic 0.5 * sum c_i (w_i - t_i)^2.
  const Eigen::RowVector3d c(1.0, 10.0, 0.1), t(3.0, -1.0, 2.0);
  for (int i = 0; i < 3000; ++i) {
    p.grad = (c.array() * (p.value.array() - t.array())).matrix();
    opt.step(params, 0.01, 0.0);
  }
  CHECK((p.value - t).norm() < 1e-2);

  p.grad(0, 1) = std::nan("");
  CHECK_THROWS_AS(opt.step(params, 0.01, 0.0), NumericError);
}

TEST_CASE("every architecture overfits a single episode", "[train][overfit]") {
  Fixture f(5, 3);
  const auto ep = make_episode(f.spec, CounterRng(6));
  const auto tb = make_training_batch(std::span(&ep, 1), MaskMode::AllTokens);
  for (auto arch : {nn::Arch::Transformer, nn::Arch::Lstm, nn::Arch::Gru, nn::Arch::Ssm}) {
    DYNAMIC_SECTION(to_string(arch)) {
      auto model = nn::make_model<float>(f.model(arch));
      nn::AdamW<float> opt(model->parameters());
      nn::Matrix<float> d;
      const double initial = token_loss(model->forward(tb.input), tb.targets, tb.active);
      double loss = initial;
      for (int step = 0; step < 400 && loss > 0.02; ++step) {
        model->zero_grad();
        loss = token_loss(model->forward(tb.input), tb.targets, tb.active, &d);
        model->backward(d);
        opt.step(model->parameters(), 1e-2, 0.0);
      }
      CHECK(initial > 2.0);
      CHECK(loss < 0.02);
    }
  }
}

TEST_CASE("training run validates its job", "[train]") {
  Fixture f;
  TrainJob job;
  job.train_spec = f.spec;
  job.model = f.model();
  job.run_dir = scratch_dir("validate");
  job.model.vocab += 1;
  CHECK_THROWS_AS(train_run<float>(job), ConfigError);
  job.model = f.model();
  job.model.max_len -= 1;
  CHECK_THROWS_AS(train_run<float>(job), ConfigError);
  job.model = f.model();
  job.train.epochs = 0;
  CHECK_THROWS_AS(train_run<float>(job), ConfigError);
  job.train = TrainConfig{};
  job.train.warmup_epochs = 200;
  CHECK_THROWS_AS(train_run<float>(job), ConfigError);
}

TEST_CASE("interrupted run resumes to the uninterrupted result", "[train][resume]") {
  Fixture f;
  TrainJob job;
  job.train_spec = f.spec;
  job.model = f.model();
  job.train.epochs = 4;
  job.train.batches_per_epoch = 3;
  job.train.batch_size = 4;
  job.train.eval_episodes = 6;
  job.seed = 9;
  job.config_hash = "feedfacefeedface";
  auto test_spec = f.spec;
  test_spec.generation = Generation::OptT;
  job.eval_sets.push_back(EvalSet{"test", test_spec, f.spec, 2});

  job.run_dir = scratch_dir("straight");
  const auto straight = train_run<float>(job);
  REQUIRE(straight.epochs.size() == 4);
  CHECK(straight.epochs[0].metrics.contains("test/z_accuracy"));
  CHECK_FALSE(straight.epochs[0].metrics.contains("test/y_accuracy"));
  CHECK(straight.epochs[1].metrics.contains("test/y_accuracy@4"));
  CHECK(straight.epochs[3].metrics.at("train/lr") == Catch::Approx(lr_at_epoch(4, 1e-3, 1, 4)));
  CHECK(read_run_record(job.run_dir / kRecordFile) == straight);
  CHECK(fs::exists(job.run_dir / kMetricsFile));

  auto crashing = job;
  crashing.run_dir = scratch_dir("resumed");
  crashing.log = [](const std::string& line) {
    if (line.starts_with("epoch 2/")) throw std::runtime_error("simulated crash");
  };
  CHECK_THROWS_AS(train_run<float>(crashing), std::runtime_error);
  CHECK(read_run_record(crashing.run_dir / kRecordFile).epochs.size() == 2);

  auto resumed = crashing;
  resumed.log = nullptr;
  resumed.resume = true;
  CHECK(train_run<float>(resumed) == straight);
  CHECK(slurp(resumed.run_dir / "checkpoints" / kFinalCheckpoint) ==
        slurp(job.run_dir / "checkpoints" / kFinalCheckpoint));

  auto foreign = resumed;
  foreign.config_hash = "0000000000000000";
  CHECK_THROWS_AS(train_run<float>(foreign), LoadError);
}

TEST_CASE("checkpoints round trip and reject mismatches", "[train][checkpoint]") {
  Fixture f;
  const auto dir = scratch_dir("ckpt");
  fs::create_directories(dir);
  auto model = nn::make_model<float>(f.model());
  nn::AdamW<float> opt(model->parameters());
  const auto batch = make_batch(f.spec, 2, CounterRng(1));
  const auto tb = make_training_batch(batch.episodes, MaskMode::AllTokens);
  nn::Matrix<float> d;
  token_loss(model->forward(tb.input), tb.targets, tb.active, &d);
  model->backward(d);
  opt.step(model->parameters(), 1e-3, 0.0);
  const auto path = dir / "m.ckpt";
  nn::save_checkpoint(path, *model, {{"epoch", 1}}, &opt);

  const auto cfg = f.model();
  auto loaded = nn::load_model<float>(path, &cfg);
  CHECK(loaded->forward(tb.input) == model->forward(tb.input));
  CHECK(nn::read_checkpoint_header(path).extra.at("epoch") == 1);

  auto other = nn::make_model<float>(f.model());
  nn::AdamW<float> opt2(other->parameters());
  nn::load_checkpoint(path, *other, &opt2);
  CHECK(opt2.steps() == 1);
  CHECK(opt2.second_moments().front() == opt.second_moments().front());

  auto wider = f.model();
  wider.vocab += 1;
  CHECK_THROWS_AS(nn::load_model<float>(path, &wider), LoadError);
  auto as_double = nn::make_model<double>(f.model());
  CHECK_THROWS_AS(nn::load_checkpoint(path, *as_double), LoadError);

  const auto bytes = slurp(path);
  const auto cut = dir / "cut.ckpt";
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 4);
  CHECK_THROWS_AS(nn::load_model<float>(cut), LoadError);
  const auto junk = dir / "junk.ckpt";
  std::ofstream(junk, std::ios::binary) << "definitely not a checkpoint";
  CHECK_THROWS_AS(nn::load_model<float>(junk), LoadError);

  nn::save_checkpoint(path, *model);
  auto opt3 = nn::AdamW<float>(other->parameters());
  CHECK_THROWS_AS(nn::load_checkpoint(path, *other, &opt3), LoadError);
}

TEST_CASE("train config JSON round trip", "[train]") {
  TrainConfig c;
  c.epochs = 12;
  c.mask = MaskMode::QueryOnly;
  c.seeds = {5, 6};
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(back.epochs == 12);
  CHECK(back.mask == MaskMode::QueryOnly);
  CHECK(back.seeds == std::vector<std::uint64_t>{5, 6});
  CHECK(back.warmup() == 1);
}
