#include "mrc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mrc/checkpoint.hpp"
#include "mrc/synthetic.hpp"

namespace mrc {

TaskData load_task(const TaskSpec& spec) {
  TaskData data;
  data.name = spec.name;
  switch (spec.kind) {
    case Task::kDream:
      data.train = load_dream(spec.train_path);
      if (!spec.dev_path.empty()) data.dev = load_dream(spec.dev_path);
      break;
    case Task::kRace:
      data.train = load_race(spec.train_path);
      if (!spec.dev_path.empty()) data.dev = load_race(spec.dev_path);
      break;
    case Task::kSynthetic:
      data.train = synthetic_task(spec.synthetic_train, spec.synthetic_options,
                                  spec.synthetic_vocab, spec.synthetic_seed);
      data.dev = synthetic_task(spec.synthetic_dev, spec.synthetic_options,
                                spec.synthetic_vocab, spec.synthetic_seed + 7919);
      break;
  }
  return data;
}

ProportionalSampler::ProportionalSampler(std::vector<std::size_t> sizes,
                                         std::size_t batch_size, std::uint64_t seed)
    : sizes_(std::move(sizes)), batch_size_(batch_size), rng_(seed) {
  if (sizes_.empty()) throw ConfigError("sampler: no tasks");
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (sizes_[i] == 0)
      throw ConfigError("sampler: task " + std::to_string(i) + " is empty");
    total_ += sizes_[i];
  }
  if (batch_size_ == 0) throw ConfigError("sampler: batch size must be >= 1");
  pools_.resize(sizes_.size());
  for (std::size_t t = 0; t < sizes_.size(); ++t) refill(t);
}

void ProportionalSampler::refill(std::size_t t) {
  auto& pool = pools_[t];
  pool.order.resize(sizes_[t]);
  for (std::size_t i = 0; i < sizes_[t]; ++i) pool.order[i] = i;
  rng_.shuffle(pool.order);
  pool.cursor = 0;
}

ProportionalSampler::Batch ProportionalSampler::next() {
  const double r = rng_.uniform() * static_cast<double>(total_);
  std::size_t task = sizes_.size() - 1;
  double acc = 0;
  for (std::size_t t = 0; t < sizes_.size(); ++t) {
    acc += static_cast<double>(sizes_[t]);
    if (r < acc) {
      task = t;
      break;
    }
  }
  Batch batch;
  batch.task = task;
  batch.indices.reserve(batch_size_);
  auto& pool = pools_[task];
  for (std::size_t i = 0; i < batch_size_; ++i) {
    if (pool.cursor == pool.order.size()) refill(task);
    batch.indices.push_back(pool.order[pool.cursor++]);
  }
  return batch;
}

double linear_schedule(std::size_t step, std::size_t total_steps,
                       std::size_t warmup_steps, double peak_lr) {
  if (total_steps == 0 || warmup_steps == 0 || warmup_steps >= total_steps)
    throw ConfigError("linear_schedule: need 0 < warmup < total");
  if (step >= total_steps) return 0.0;
  if (step <= warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

ClipReport clip_grad_norm(std::span<const NamedParam<float>> params, double max_norm) {
  if (max_norm <= 0) throw ConfigError("clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g))
        throw NumericError("clip_grad_norm: non-finite gradient in " + p.name);
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  ClipReport report;
  report.observed_norm = std::sqrt(sq);
  report.post_norm = report.observed_norm;
  if (report.observed_norm > max_norm) {
    report.scale = max_norm / report.observed_norm;
    const float s = static_cast<float>(report.scale);
    double post_sq = 0;
    for (const auto& p : params)
      for (float& g : p.tensor.mutable_grad()) {
        g *= s;
        post_sq += static_cast<double>(g) * static_cast<double>(g);
      }
    report.post_norm = std::sqrt(post_sq);
  }
  return report;
}

AdamwState AdamwState::init(std::span<const NamedParam<float>> params) {
  AdamwState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.push_back(Tensor<float>::zeros(p.tensor.shape()));
    s.v.push_back(Tensor<float>::zeros(p.tensor.shape()));
  }
  return s;
}

void adamw_step(std::span<const NamedParam<float>> params, AdamwState& opt,
                std::size_t step, double lr, double weight_decay, double beta1,
                double beta2, double eps) {
  if (step < 1) throw ConfigError("adamw_step: step counts from 1");
  if (opt.m.size() != params.size() || opt.v.size() != params.size())
    throw ConfigError("adamw_step: moment buffers do not match the parameter list");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float> tensor = params[i].tensor;  // non-const handle, same storage
    auto theta = tensor.value();
    auto m = opt.m[i].value();
    auto v = opt.v[i].value();
    auto grad = tensor.grad();
    const double decay = params[i].decay ? weight_decay : 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * g;
      const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      theta[j] = static_cast<float>(
          static_cast<double>(theta[j]) -
          lr * (mhat / (std::sqrt(vhat) + eps) + decay * static_cast<double>(theta[j])));
    }
  }
}

std::vector<EncodedQuestion> encode_questions(std::span<const McExample> examples,
                                              const Vocab& vocab, std::size_t max_len) {
  std::vector<EncodedQuestion> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    EncodedQuestion q;
    q.example_id = ex.example_id;
    q.gold = ex.gold;
    q.options = encode_example(ex, vocab, max_len);
    out.push_back(std::move(q));
  }
  return out;
}

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg,
                    std::span<const EncodedQuestion> split) {
  if (split.empty()) throw DataError("evaluate: empty split");
  EvalResult result;
  result.predictions.reserve(split.size());
  std::size_t hits = 0;
  for (const auto& q : split) {
    auto scores = predict_question(params, cfg, q.options);
    if (scores.predicted == q.gold) ++hits;
    result.predictions.push_back(
        {q.example_id, scores.predicted, q.gold, scores.probabilities});
  }
  result.accuracy = static_cast<double>(hits) / static_cast<double>(split.size());
  return result;
}

void write_predictions(const std::filesystem::path& path,
                       std::span<const Prediction> predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions to " + path.string());
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["example_id"] = p.example_id;
    j["predicted"] = p.predicted;
    j["gold"] = p.gold;
    j["probabilities"] = p.probabilities;
    out << j.dump() << '\n';
  }
}

std::string metrics_to_json_line(const MetricsRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["task"] = record.task;
  j["lr"] = record.lr;
  j["train_loss"] = record.train_loss;
  nlohmann::ordered_json dev;
  for (const auto& [name, acc] : record.dev_accuracy) dev[name] = acc;
  j["dev_acc"] = std::move(dev);
  return j.dump();
}

TrainResult train(const TrainConfig& tcfg, const ModelConfig& mcfg,
                  std::span<const TaskData> tasks, const Vocab& vocab,
                  const TrainHooks& hooks) {
  tcfg.validate();
  mcfg.validate();
  if (tasks.empty()) throw ConfigError("train: no tasks");

  // Pre-encode every split once; encoding is pure.
  std::vector<std::vector<EncodedQuestion>> train_sets, dev_sets;
  std::vector<std::size_t> sizes;
  for (const auto& t : tasks) {
    if (t.train.empty()) throw ConfigError("train: task " + t.name + " has no examples");
    train_sets.push_back(encode_questions(t.train, vocab, mcfg.max_len));
    dev_sets.push_back(encode_questions(t.dev, vocab, mcfg.max_len));
    sizes.push_back(t.train.size());
  }

  const std::size_t total_examples =
      std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  const std::size_t steps_per_epoch =
      (total_examples + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(2, tcfg.epochs * steps_per_epoch);
  const std::size_t warmup_steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(
             tcfg.warmup_fraction * static_cast<double>(total_steps))));
  const std::size_t eval_every =
      tcfg.eval_every ? tcfg.eval_every : (tasks.size() > 1 ? 1000 : 100);

  TrainResult result;
  result.total_steps = total_steps;
  result.warmup_steps = warmup_steps;
  result.state.params = init_model<float>(mcfg);
  result.state.params.mark_requires_grad();
  auto named = result.state.params.named();
  result.state.opt = AdamwState::init(named);

  ProportionalSampler sampler(sizes, tcfg.batch_size, tcfg.seed);
  Rng dropout_rng = Rng::stream(tcfg.seed, 17);

  std::ofstream metrics_file;
  if (!hooks.out_dir.empty()) {
    std::filesystem::create_directories(hooks.out_dir);
    metrics_file.open(hooks.out_dir / "metrics.jsonl", std::ios::binary);
    if (!metrics_file)
      throw IoError("cannot write metrics log under " + hooks.out_dir.string());
  }

  const auto wall_start = std::chrono::steady_clock::now();
  double window_loss = 0.0;
  std::size_t window_count = 0;

  for (std::size_t step = 1; step <= total_steps; ++step) {
    const auto batch = sampler.next();
    const auto& questions = train_sets[batch.task];

    result.state.params.zero_grads();
    Tape<float> tape;
    std::vector<Tensor<float>> losses;
    losses.reserve(batch.indices.size());
    for (std::size_t idx : batch.indices) {
      const auto& q = questions[idx];
      auto logits = question_logits(tape, result.state.params, mcfg, q.options,
                                    mcfg.dropout > 0 ? &dropout_rng : nullptr);
      losses.push_back(cross_entropy(tape, logits, q.gold));
    }
    auto batch_loss = scale(tape, sum(tape, stack_scalars(tape, losses)),
                            1.0f / static_cast<float>(losses.size()));
    const double loss_value = batch_loss.item();
    if (!std::isfinite(loss_value))
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         " on task " + tasks[batch.task].name + " (first example " +
                         questions[batch.indices.front()].example_id + ")");
    tape.backward(batch_loss);

    ClipReport clip;
    try {
      clip = clip_grad_norm(named, tcfg.clip_norm);
    } catch (const NumericError& e) {
      throw NumericError("train: step " + std::to_string(step) + " on task " +
                         tasks[batch.task].name + ": " + e.what());
    }
    if (hooks.clip_norms) hooks.clip_norms->push_back(clip.post_norm);
    if (hooks.step_losses) hooks.step_losses->push_back(loss_value);

    const double lr = linear_schedule(step, total_steps, warmup_steps, tcfg.peak_lr);
    adamw_step(named, result.state.opt, step, lr, tcfg.weight_decay);
    result.state.step = step;
    result.state.sampler_rng_state = sampler.rng_state();

    window_loss += loss_value;
    ++window_count;

    if (step % eval_every == 0 || step == total_steps) {
      MetricsRecord record;
      record.step = step;
      record.task = tasks[batch.task].name;
      record.lr = lr;
      record.train_loss = window_loss / static_cast<double>(window_count);
      window_loss = 0.0;
      window_count = 0;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (dev_sets[t].empty()) continue;
        record.dev_accuracy.emplace_back(
            tasks[t].name, evaluate(result.state.params, mcfg, dev_sets[t]).accuracy);
      }
      result.state.metrics.push_back(record);
      if (metrics_file.is_open()) {
        metrics_file << metrics_to_json_line(record) << '\n';
        metrics_file.flush();
      }

      // Best-model selection keys on the first task's dev accuracy.
      if (!record.dev_accuracy.empty() &&
          record.dev_accuracy.front().first == tasks.front().name &&
          record.dev_accuracy.front().second > result.state.best_dev_accuracy) {
        result.state.best_dev_accuracy = record.dev_accuracy.front().second;
        result.state.best_dev_step = step;
        if (!hooks.out_dir.empty()) {
          CheckpointMeta meta;
          meta.model = mcfg;
          meta.train = tcfg;
          meta.step = step;
          meta.dev_accuracy = result.state.best_dev_accuracy;
          meta.best_step = step;
          meta.sampler_rng_state = sampler.rng_state();
          result.best_checkpoint = hooks.out_dir / "best.ckpt";
          save_checkpoint(result.best_checkpoint, meta, result.state.params,
                          &result.state.opt);
        }
      }

      if (hooks.console) {
        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - wall_start)
                                .count();
        (*hooks.console) << "step " << step << "/" << total_steps
                         << " task=" << record.task << " loss=" << record.train_loss
                         << " lr=" << record.lr;
        for (const auto& [name, acc] : record.dev_accuracy)
          (*hooks.console) << " dev[" << name << "]=" << acc;
        (*hooks.console) << " best=" << result.state.best_dev_accuracy << "@"
                         << result.state.best_dev_step << " (" << secs << "s)\n";
      }
    }
  }
  return result;
}

}  // namespace mrc
