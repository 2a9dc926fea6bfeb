#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mrc/checkpoint.hpp"
#include "mrc/synthetic.hpp"
#include "mrc/trainer.hpp"

using mrc::ModelConfig;
using mrc::ProportionalSampler;
using mrc::TaskData;
using mrc::Tensor;
using mrc::TrainConfig;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("mrc_trainer_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Tuned toy recipe: separable 3-option task, 50 examples, 200 steps.
struct OverfitSetup {
  TaskData task;
  mrc::Vocab vocab;
  ModelConfig mcfg;
  TrainConfig tcfg;
};

OverfitSetup overfit_setup(std::uint64_t seed) {
  OverfitSetup s;
  s.task.name = "synth3";
  s.task.train = mrc::synthetic_task(50, 3, 50, 11);
  s.task.dev = s.task.train;  // overfit watches the train split
  s.vocab = mrc::build_vocab(s.task.train, 4000);

  s.mcfg.vocab_size = s.vocab.size();
  s.mcfg.hidden = 32;
  s.mcfg.layers = 2;
  s.mcfg.heads = 2;
  s.mcfg.duma_heads = 2;
  s.mcfg.duma_head_dim = 8;
  s.mcfg.max_len = 24;
  s.mcfg.ff_width = 64;
  s.mcfg.share_layers = true;
  s.mcfg.seed = seed;

  s.tcfg.batch_size = 10;
  s.tcfg.peak_lr = 3e-3;
  s.tcfg.weight_decay = 0.01;
  s.tcfg.clip_norm = 1.0;
  s.tcfg.epochs = 40;  // 5 steps per epoch -> exactly 200 steps
  s.tcfg.warmup_fraction = 0.1;
  s.tcfg.eval_every = 25;
  s.tcfg.seed = seed;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// proportional sampler
// ---------------------------------------------------------------------------

TEST_CASE("sampler draws tasks in proportion to their sizes") {
  ProportionalSampler sampler({30, 70}, 4, 123);
  std::size_t task0 = 0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i)
    if (sampler.next().task == 0) ++task0;
  const double frac = static_cast<double>(task0) / static_cast<double>(draws);
  CHECK(std::fabs(frac - 0.30) < 0.02);
}

TEST_CASE("sampler at published corpus sizes favors the larger task 10:1") {
  // ~10k-question task against a ~100k one: expected fraction 10000/110000.
  ProportionalSampler sampler({10000, 100000}, 24, 7);
  std::size_t small = 0;
  const std::size_t draws = 20000;
  for (std::size_t i = 0; i < draws; ++i)
    if (sampler.next().task == 0) ++small;
  const double frac = static_cast<double>(small) / static_cast<double>(draws);
  CHECK(std::fabs(frac - 10000.0 / 110000.0) < 0.01);
}

TEST_CASE("sampler with one task always draws it") {
  ProportionalSampler sampler({17}, 3, 5);
  for (int i = 0; i < 50; ++i) CHECK(sampler.next().task == 0);
}

TEST_CASE("sampler draws without replacement within a task epoch") {
  ProportionalSampler sampler({12}, 4, 9);
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b)
      for (std::size_t idx : sampler.next().indices) seen.insert(idx);
    CHECK(seen.size() == 12);  // a permutation of 0..11, no repeats
  }
}

TEST_CASE("sampler task frequencies pass a chi-square test at 10k draws") {
  std::vector<std::size_t> sizes{20, 30, 50};
  ProportionalSampler sampler(sizes, 2, 77);
  std::vector<double> counts(3, 0);
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) counts[sampler.next().task] += 1;
  double chi2 = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double expected = draws * static_cast<double>(sizes[t]) / 100.0;
    chi2 += (counts[t] - expected) * (counts[t] - expected) / expected;
  }
  CHECK(chi2 < 9.21);  // df = 2, significance 0.01
}

TEST_CASE("sampler is deterministic under a seed and rejects empty tasks") {
  ProportionalSampler a({5, 9}, 3, 42), b({5, 9}, 3, 42);
  for (int i = 0; i < 30; ++i) {
    auto ba = a.next(), bb = b.next();
    CHECK(ba.task == bb.task);
    CHECK(ba.indices == bb.indices);
  }
  CHECK_THROWS_AS(ProportionalSampler({5, 0}, 3, 1), mrc::ConfigError);
  CHECK_THROWS_AS(ProportionalSampler({}, 3, 1), mrc::ConfigError);
}

// ---------------------------------------------------------------------------
// schedule, clipping, optimizer
// ---------------------------------------------------------------------------

TEST_CASE("linear schedule rises to peak then decays to zero") {
  CHECK(mrc::linear_schedule(100, 1000, 100, 1e-5) == doctest::Approx(1e-5));
  CHECK(mrc::linear_schedule(1000, 1000, 100, 1e-5) == 0.0);
  CHECK(mrc::linear_schedule(550, 1000, 100, 1e-5) == doctest::Approx(5e-6));
  CHECK(mrc::linear_schedule(0, 1000, 100, 1e-5) == 0.0);
  CHECK(mrc::linear_schedule(2000, 1000, 100, 1e-5) == 0.0);  // clamps
  CHECK_THROWS_AS(mrc::linear_schedule(1, 100, 100, 1e-5), mrc::ConfigError);
}

TEST_CASE("lr trace is piecewise linear with a single maximum at warmup") {
  const std::size_t total = 500, warmup = 50;
  std::vector<double> trace;
  for (std::size_t s = 0; s <= total; ++s)
    trace.push_back(mrc::linear_schedule(s, total, warmup, 1e-5));
  auto peak = std::max_element(trace.begin(), trace.end());
  CHECK(static_cast<std::size_t>(peak - trace.begin()) == warmup);
  for (std::size_t s = 1; s < warmup; ++s)
    CHECK(trace[s + 1] - trace[s] == doctest::Approx(trace[1] - trace[0]).epsilon(1e-9));
  for (std::size_t s = warmup + 1; s < total - 1; ++s)
    CHECK(trace[s + 1] - trace[s] ==
          doctest::Approx(trace[warmup + 1] - trace[warmup]).epsilon(1e-9));
}

namespace {

std::vector<mrc::NamedParam<float>> two_params(Tensor<float>& a, Tensor<float>& b) {
  return {{"w", a, true}, {"bias", b, false}};
}

}  // namespace

TEST_CASE("clip_grad_norm rescales exactly when over the cap") {
  auto a = Tensor<float>::zeros({2});
  auto b = Tensor<float>::zeros({2});
  auto params = two_params(a, b);
  // grads (2,2,2,2): global norm 4
  for (auto g : {&a, &b})
    for (float& v : g->mutable_grad()) v = 2.0f;
  auto report = mrc::clip_grad_norm(params, 1.0);
  CHECK(report.observed_norm == doctest::Approx(4.0));
  CHECK(report.scale == doctest::Approx(0.25));
  CHECK(report.post_norm == doctest::Approx(1.0).epsilon(1e-6));
  for (float v : a.grad()) CHECK(v == doctest::Approx(0.5f));

  a.zero_grad();
  b.zero_grad();
  for (float& v : a.mutable_grad()) v = 0.25f;
  b.mutable_grad();
  auto gentle = mrc::clip_grad_norm(params, 1.0);
  CHECK(gentle.observed_norm == doctest::Approx(std::sqrt(0.125)));
  CHECK(gentle.scale == 1.0);
  for (float v : a.grad()) CHECK(v == 0.25f);  // untouched

  a.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(mrc::clip_grad_norm(params, 1.0), mrc::NumericError);
}

TEST_CASE("first adamw step moves parameters by about the learning rate") {
  auto w = Tensor<float>::from({3}, {0.5f, -0.25f, 1.0f});
  auto b = Tensor<float>::from({1}, {0.1f});
  auto params = two_params(w, b);
  auto opt = mrc::AdamwState::init(params);
  for (float& g : w.mutable_grad()) g = 0.37f;  // constant gradient
  b.mutable_grad()[0] = -2.5f;
  const double lr = 1e-3;
  auto before_w = std::vector<float>(w.value().begin(), w.value().end());
  const float before_b = b.value()[0];
  mrc::adamw_step(params, opt, 1, lr, /*weight_decay=*/0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const double moved = before_w[i] - w.value()[i];
    CHECK(moved == doctest::Approx(lr).epsilon(0.05));  // sign of g is +
  }
  CHECK(b.value()[0] - before_b == doctest::Approx(lr).epsilon(0.05));
}

TEST_CASE("adamw leaves parameters alone under zero gradients and no decay") {
  auto w = Tensor<float>::from({2}, {0.7f, -0.3f});
  auto b = Tensor<float>::from({1}, {0.2f});
  auto params = two_params(w, b);
  auto opt = mrc::AdamwState::init(params);
  w.mutable_grad();
  b.mutable_grad();
  mrc::adamw_step(params, opt, 1, 0.1, 0.0);
  CHECK(w.value()[0] == 0.7f);
  CHECK(w.value()[1] == -0.3f);
  CHECK(b.value()[0] == 0.2f);
}

TEST_CASE("decoupled decay shrinks decayed tensors only") {
  auto w = Tensor<float>::from({2}, {1.0f, -2.0f});
  auto b = Tensor<float>::from({1}, {1.0f});
  auto params = two_params(w, b);  // bias is flagged no-decay
  auto opt = mrc::AdamwState::init(params);
  w.mutable_grad();
  b.mutable_grad();
  mrc::adamw_step(params, opt, 1, /*lr=*/0.1, /*weight_decay=*/0.01);
  CHECK(w.value()[0] == doctest::Approx(0.999f).epsilon(1e-6));
  CHECK(w.value()[1] == doctest::Approx(-1.998f).epsilon(1e-6));
  CHECK(b.value()[0] == 1.0f);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TEST_CASE("overfit sanity: 50 separable examples hit accuracy 1.0 within 200 steps") {
  auto s = overfit_setup(1);
  std::vector<double> clip_norms, losses;
  mrc::TrainHooks hooks;
  hooks.clip_norms = &clip_norms;
  hooks.step_losses = &losses;
  std::vector<TaskData> tasks{s.task};
  auto result = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, hooks);

  CHECK(result.total_steps == 200);
  CHECK(result.warmup_steps == 20);
  CHECK(result.state.best_dev_accuracy == 1.0);
  CHECK(result.state.best_dev_step <= 200);

  // Post-clip norms respect the cap on every step.
  REQUIRE(clip_norms.size() == 200);
  for (double n : clip_norms) CHECK(n <= s.tcfg.clip_norm + 1e-6);

  // Loss is monotonically non-increasing when smoothed over 20-step windows.
  REQUIRE(losses.size() == 200);
  std::vector<double> windows;
  for (std::size_t w = 0; w + 20 <= losses.size(); w += 20) {
    double m = 0;
    for (std::size_t i = w; i < w + 20; ++i) m += losses[i];
    windows.push_back(m / 20.0);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);

  // Final evaluation on the train split reproduces the recorded accuracy.
  auto questions = mrc::encode_questions(s.task.train, s.vocab, s.mcfg.max_len);
  auto eval = mrc::evaluate(result.state.params, s.mcfg, questions);
  CHECK(eval.accuracy == 1.0);
}

TEST_CASE("identical seeds produce identical metrics logs and parameters") {
  auto s = overfit_setup(7);
  s.tcfg.epochs = 12;  // 60 steps is plenty for a determinism check
  s.tcfg.eval_every = 20;
  std::vector<TaskData> tasks{s.task};

  auto dir_a = temp_dir("det_a");
  auto dir_b = temp_dir("det_b");
  auto ra = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {.out_dir = dir_a});
  auto rb = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {.out_dir = dir_b});

  const auto log_a = read_file(dir_a / "metrics.jsonl");
  const auto log_b = read_file(dir_b / "metrics.jsonl");
  CHECK(!log_a.empty());
  CHECK(log_a == log_b);

  auto named_a = ra.state.params.named();
  auto named_b = rb.state.params.named();
  REQUIRE(named_a.size() == named_b.size());
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    auto va = named_a[i].tensor.value();
    auto vb = named_b[i].tensor.value();
    for (std::size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
  }
}

TEST_CASE("dropout-enabled training stays finite and deterministic per seed") {
  auto s = overfit_setup(13);
  s.mcfg.dropout = 0.1;
  s.tcfg.epochs = 8;  // 40 steps
  s.tcfg.eval_every = 20;
  std::vector<TaskData> tasks{s.task};
  auto a = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {});
  auto b = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {});
  REQUIRE(a.state.metrics.size() == b.state.metrics.size());
  for (std::size_t i = 0; i < a.state.metrics.size(); ++i) {
    CHECK(std::isfinite(a.state.metrics[i].train_loss));
    CHECK(a.state.metrics[i].train_loss == b.state.metrics[i].train_loss);
  }
}

TEST_CASE("default eval cadence is 100 single-task and 1000 multi-task") {
  auto s = overfit_setup(15);
  s.mcfg.hidden = 16;
  s.mcfg.layers = 1;
  s.mcfg.ff_width = 32;
  s.tcfg.epochs = 50;     // 250 steps
  s.tcfg.eval_every = 0;  // pick the default
  std::vector<TaskData> tasks{s.task};
  auto result = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {});
  std::vector<std::size_t> steps;
  for (const auto& m : result.state.metrics) steps.push_back(m.step);
  CHECK(steps == std::vector<std::size_t>{100, 200, 250});
}

TEST_CASE("evaluate is idempotent and rejects empty splits") {
  auto s = overfit_setup(3);
  auto params = mrc::init_model<float>(s.mcfg);
  auto questions = mrc::encode_questions(s.task.train, s.vocab, s.mcfg.max_len);
  auto a = mrc::evaluate(params, s.mcfg, questions);
  auto b = mrc::evaluate(params, s.mcfg, questions);
  CHECK(a.accuracy == b.accuracy);
  REQUIRE(a.predictions.size() == b.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    CHECK(a.predictions[i].predicted == b.predictions[i].predicted);
    CHECK(a.predictions[i].probabilities == b.predictions[i].probabilities);
  }
  std::vector<mrc::EncodedQuestion> empty;
  CHECK_THROWS_AS(mrc::evaluate(params, s.mcfg, empty), mrc::DataError);
}

TEST_CASE("prediction dump is one json object per question") {
  auto s = overfit_setup(5);
  auto params = mrc::init_model<float>(s.mcfg);
  auto questions = mrc::encode_questions(s.task.train, s.vocab, s.mcfg.max_len);
  auto eval = mrc::evaluate(params, s.mcfg, questions);
  auto dir = temp_dir("dump");
  mrc::write_predictions(dir / "preds.jsonl", eval.predictions);
  std::ifstream in(dir / "preds.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("example_id"));
    CHECK(j.contains("predicted"));
    CHECK(j.contains("gold"));
    CHECK(j["probabilities"].size() == 3);
    ++rows;
  }
  CHECK(rows == questions.size());
}

TEST_CASE("load_task generates disjoint synthetic train and dev splits") {
  mrc::TaskSpec spec;
  spec.name = "synth4";
  spec.kind = mrc::Task::kSynthetic;
  spec.synthetic_train = 20;
  spec.synthetic_dev = 10;
  spec.synthetic_options = 4;
  auto data = mrc::load_task(spec);
  CHECK(data.train.size() == 20);
  CHECK(data.dev.size() == 10);
  for (const auto& ex : data.train) CHECK(ex.options.size() == 4);
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round-trip is byte-exact and preserves dev accuracy") {
  auto s = overfit_setup(9);
  s.tcfg.epochs = 8;  // 40 steps
  s.tcfg.eval_every = 20;
  std::vector<TaskData> tasks{s.task};
  auto dir = temp_dir("ckpt");
  auto result = mrc::train(s.tcfg, s.mcfg, tasks, s.vocab, {.out_dir = dir});
  REQUIRE(!result.best_checkpoint.empty());
  REQUIRE(fs::exists(result.best_checkpoint));

  auto loaded = mrc::load_checkpoint(result.best_checkpoint);
  CHECK(loaded.meta.dev_accuracy == result.state.best_dev_accuracy);
  CHECK(loaded.meta.best_step == result.state.best_dev_step);
  CHECK(loaded.has_opt);
  CHECK(loaded.meta.model.hidden == s.mcfg.hidden);
  CHECK(loaded.meta.train.batch_size == s.tcfg.batch_size);

  // save(load(x)) reproduces the file byte for byte.
  auto copy = dir / "copy.ckpt";
  mrc::save_checkpoint(copy, loaded.meta, loaded.params, &loaded.opt);
  CHECK(read_file(result.best_checkpoint) == read_file(copy));

  // Evaluating the restored parameters reproduces the recorded accuracy.
  auto questions = mrc::encode_questions(s.task.dev, s.vocab, s.mcfg.max_len);
  auto eval = mrc::evaluate(loaded.params, loaded.meta.model, questions);
  CHECK(eval.accuracy == loaded.meta.dev_accuracy);

  // Corrupt files are rejected, not crashed on.
  auto broken = dir / "broken.ckpt";
  std::ofstream(broken, std::ios::binary) << "MRCKgarbage";
  CHECK_THROWS_AS(mrc::load_checkpoint(broken), mrc::DataError);
  auto not_ckpt = dir / "not.ckpt";
  std::ofstream(not_ckpt, std::ios::binary) << "hello";
  CHECK_THROWS_AS(mrc::load_checkpoint(not_ckpt), mrc::DataError);

  // A bumped format version is refused with a clear message.
  auto future = dir / "future.ckpt";
  {
    auto bytes = read_file(result.best_checkpoint);
    bytes[4] = 2;  // u32 version little-endian
    std::ofstream(future, std::ios::binary) << bytes;
  }
  CHECK_THROWS_WITH_AS(mrc::load_checkpoint(future), doctest::Contains("version"),
                       mrc::DataError);
}

TEST_CASE("metrics records serialize deterministically") {
  mrc::MetricsRecord r;
  r.step = 120;
  r.task = "dream";
  r.lr = 5e-6;
  r.train_loss = 1.25;
  r.dev_accuracy = {{"dream", 0.5}, {"race", 0.25}};
  const auto line = mrc::metrics_to_json_line(r);
  CHECK(line ==
        R"({"step":120,"task":"dream","lr":5e-06,"train_loss":1.25,"dev_acc":{"dream":0.5,"race":0.25}})");
}
