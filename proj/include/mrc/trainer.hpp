#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrc/model.hpp"
#include "mrc/text_pipeline.hpp"

namespace mrc {

// One task entry of a training run. Synthetic tasks are generated on the fly
// and need no paths.
struct TaskSpec {
  std::string name;
  Task kind = Task::kSynthetic;
  std::string train_path;
  std::string dev_path;
  std::size_t synthetic_train = 50;
  std::size_t synthetic_dev = 30;
  std::size_t synthetic_options = 3;
  std::size_t synthetic_vocab = 30;
  std::uint64_t synthetic_seed = 1;
};

struct TrainConfig {
  std::size_t batch_size = 24;
  double peak_lr = 1e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t epochs = 5;
  double warmup_fraction = 0.10;
  // 0 picks the default cadence: every 1000 steps for multi-task runs,
  // every 100 for single-task ones.
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;
  std::vector<TaskSpec> tasks;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
    if (peak_lr <= 0) throw ConfigError("train config: peak_lr must be positive");
    if (warmup_fraction <= 0 || warmup_fraction >= 1)
      throw ConfigError("train config: warmup_fraction must be in (0, 1)");
    if (epochs == 0) throw ConfigError("train config: epochs must be >= 1");
    if (clip_norm <= 0) throw ConfigError("train config: clip_norm must be positive");
    if (weight_decay < 0) throw ConfigError("train config: weight_decay must be >= 0");
  }
};

struct TaskData {
  std::string name;
  std::vector<McExample> train;
  std::vector<McExample> dev;
};

// Materializes one task: reads DREAM/RACE from disk or generates synthetic
// examples (dev drawn from a shifted seed so the splits are disjoint).
TaskData load_task(const TaskSpec& spec);

// Single-task mini-batches: the task is drawn in proportion to dataset sizes,
// examples within a task are drawn without replacement until the task's epoch
// pool empties, then reshuffled. Deterministic under the seed.
class ProportionalSampler {
 public:
  ProportionalSampler(std::vector<std::size_t> sizes, std::size_t batch_size,
                      std::uint64_t seed);

  struct Batch {
    std::size_t task = 0;
    std::vector<std::size_t> indices;
  };

  Batch next();

  std::uint64_t rng_state() const { return rng_.state(); }

 private:
  void refill(std::size_t t);

  std::vector<std::size_t> sizes_;
  std::size_t batch_size_;
  std::size_t total_ = 0;
  Rng rng_;
  struct Pool {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  std::vector<Pool> pools_;
};

// Linear warmup to peak over [0, warmup], linear decay to zero over
// [warmup, total]; clamps outside the range.
double linear_schedule(std::size_t step, std::size_t total_steps,
                       std::size_t warmup_steps, double peak_lr);

struct ClipReport {
  double observed_norm = 0.0;  // before scaling
  double post_norm = 0.0;      // recomputed after scaling
  double scale = 1.0;
};

// Global L2 norm over every parameter gradient; rescales in place when the
// norm exceeds max_norm. Non-finite gradients are an error before scaling.
ClipReport clip_grad_norm(std::span<const NamedParam<float>> params, double max_norm);

struct AdamwState {
  std::vector<Tensor<float>> m, v;  // aligned with the named parameter order

  static AdamwState init(std::span<const NamedParam<float>> params);
};

// Adam with bias correction plus decoupled weight decay:
//   θ ← θ − lr·(m̂/(√v̂+ε) + decay·θ)
// Decay applies only to parameters flagged for it (never biases or norms).
void adamw_step(std::span<const NamedParam<float>> params, AdamwState& opt,
                std::size_t step, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EncodedQuestion {
  std::string example_id;
  std::size_t gold = 0;
  std::vector<EncodedInstance> options;
};

std::vector<EncodedQuestion> encode_questions(std::span<const McExample> examples,
                                              const Vocab& vocab, std::size_t max_len);

struct Prediction {
  std::string example_id;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  std::vector<double> probabilities;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<Prediction> predictions;
};

// Deterministic forward-only pass (dropout off) over a dev or test split.
EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg,
                    std::span<const EncodedQuestion> split);

void write_predictions(const std::filesystem::path& path,
                       std::span<const Prediction> predictions);

struct MetricsRecord {
  std::size_t step = 0;
  std::string task;  // task of the batch at this step
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the window since the previous record
  std::vector<std::pair<std::string, double>> dev_accuracy;  // per task
};

// Deterministic serialization; wall time goes to the console stream instead
// so identical seeds produce byte-identical logs.
std::string metrics_to_json_line(const MetricsRecord& record);

struct TrainState {
  ModelParams<float> params;
  AdamwState opt;
  std::size_t step = 0;
  std::uint64_t sampler_rng_state = 0;
  double best_dev_accuracy = -1.0;
  std::size_t best_dev_step = 0;
  std::vector<MetricsRecord> metrics;
};

struct TrainHooks {
  std::filesystem::path out_dir;  // metrics.jsonl and best.ckpt land here
  std::ostream* console = nullptr;
  // Recomputed post-clip gradient norms, appended per step when set.
  std::vector<double>* clip_norms = nullptr;
  // Per-step batch losses, appended when set.
  std::vector<double>* step_losses = nullptr;
};

struct TrainResult {
  TrainState state;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;
  std::filesystem::path best_checkpoint;  // empty when never saved
};

// Joint training: proportional sampling over the tasks, per-question mean
// loss, clip, linear schedule, decoupled-decay Adam. Evaluates every
// eval_every steps and keeps the checkpoint that is best on the first task's
// dev split.
TrainResult train(const TrainConfig& tcfg, const ModelConfig& mcfg,
                  std::span<const TaskData> tasks, const Vocab& vocab,
                  const TrainHooks& hooks = {});

}  // namespace mrc
