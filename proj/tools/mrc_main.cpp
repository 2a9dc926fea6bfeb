#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "mrc/checkpoint.hpp"
#include "mrc/config_json.hpp"
#include "mrc/manifest.hpp"
#include "mrc/micro_check.hpp"
#include "mrc/stats.hpp"
#include "mrc/synthetic.hpp"
#include "mrc/trainer.hpp"

// Exit codes: 0 success, 1 user error, 2 internal/numeric error,
// 3 gradient check over tolerance.

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;
constexpr int kGradCheckFailure = 3;

struct TrainCli {
  std::string config_path;
  std::string out_dir;
  std::string from_manifest;
  std::string tasks_csv;
  std::string dream_train, dream_dev, race_train, race_dev;
  bool demo_synthetic = false;

  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, eval_every;
  std::optional<double> lr, weight_decay, clip_norm, warmup;
  std::optional<std::size_t> hidden, layers, heads, duma_heads, duma_head_dim;
  std::optional<std::size_t> max_len, ff_width, vocab_size, duma_depth;
  std::optional<double> dropout;
  std::optional<bool> share_layers, share_duma;
};

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mrc::IoError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw mrc::DataError("config file " + path + " is not valid JSON: " + e.what());
  }
}

void upsert_task(std::vector<mrc::TaskSpec>& specs, mrc::TaskSpec spec) {
  for (auto& s : specs)
    if (s.name == spec.name) {
      s = std::move(spec);
      return;
    }
  specs.push_back(std::move(spec));
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Defaults, then manifest, then config file, then flags.
struct ResolvedRun {
  mrc::ModelConfig model;
  mrc::TrainConfig train;
};

ResolvedRun resolve(const TrainCli& cli) {
  ResolvedRun r;
  if (!cli.from_manifest.empty()) {
    auto manifest = mrc::read_manifest(cli.from_manifest);
    r.model = manifest.model;
    r.train = manifest.train;
  }
  if (!cli.config_path.empty()) {
    const json cfg = load_json_file(cli.config_path);
    if (cfg.contains("model")) r.model = mrc::model_config_from_json(cfg["model"], r.model);
    if (cfg.contains("train")) r.train = mrc::train_config_from_json(cfg["train"], r.train);
  }

  if (cli.seed) {
    r.train.seed = *cli.seed;
    r.model.seed = *cli.seed;
  }
  if (cli.epochs) r.train.epochs = *cli.epochs;
  if (cli.batch_size) r.train.batch_size = *cli.batch_size;
  if (cli.eval_every) r.train.eval_every = *cli.eval_every;
  if (cli.lr) r.train.peak_lr = *cli.lr;
  if (cli.weight_decay) r.train.weight_decay = *cli.weight_decay;
  if (cli.clip_norm) r.train.clip_norm = *cli.clip_norm;
  if (cli.warmup) r.train.warmup_fraction = *cli.warmup;

  if (cli.hidden) r.model.hidden = *cli.hidden;
  if (cli.layers) r.model.layers = *cli.layers;
  if (cli.heads) r.model.heads = *cli.heads;
  if (cli.duma_heads) r.model.duma_heads = *cli.duma_heads;
  if (cli.duma_head_dim) r.model.duma_head_dim = *cli.duma_head_dim;
  if (cli.duma_depth) r.model.duma_depth = *cli.duma_depth;
  if (cli.max_len) r.model.max_len = *cli.max_len;
  if (cli.ff_width) r.model.ff_width = *cli.ff_width;
  if (cli.vocab_size) r.model.vocab_size = *cli.vocab_size;
  if (cli.dropout) r.model.dropout = *cli.dropout;
  if (cli.share_layers) r.model.share_layers = *cli.share_layers;
  if (cli.share_duma) r.model.share_duma_directions = *cli.share_duma;

  // Task list: config/manifest first, path flags upsert, --tasks filters.
  if (!cli.dream_train.empty()) {
    mrc::TaskSpec spec;
    spec.name = "dream";
    spec.kind = mrc::Task::kDream;
    spec.train_path = cli.dream_train;
    spec.dev_path = cli.dream_dev;
    upsert_task(r.train.tasks, std::move(spec));
  }
  if (!cli.race_train.empty()) {
    mrc::TaskSpec spec;
    spec.name = "race";
    spec.kind = mrc::Task::kRace;
    spec.train_path = cli.race_train;
    spec.dev_path = cli.race_dev;
    upsert_task(r.train.tasks, std::move(spec));
  }
  if (cli.demo_synthetic) {
    mrc::TaskSpec s3;
    s3.name = "synth3";
    s3.synthetic_train = 80;
    s3.synthetic_dev = 40;
    s3.synthetic_options = 3;
    s3.synthetic_vocab = 40;
    s3.synthetic_seed = 21;
    upsert_task(r.train.tasks, std::move(s3));
    mrc::TaskSpec s4;
    s4.name = "synth4";
    s4.synthetic_train = 120;
    s4.synthetic_dev = 40;
    s4.synthetic_options = 4;
    s4.synthetic_vocab = 40;
    s4.synthetic_seed = 22;
    upsert_task(r.train.tasks, std::move(s4));
  }
  if (!cli.tasks_csv.empty()) {
    std::vector<mrc::TaskSpec> ordered;
    for (const auto& name : split_csv(cli.tasks_csv)) {
      bool found = false;
      for (const auto& s : r.train.tasks)
        if (s.name == name) {
          ordered.push_back(s);
          found = true;
          break;
        }
      if (!found)
        throw mrc::ConfigError("--tasks names '" + name +
                               "' but no such task is configured");
    }
    r.train.tasks = std::move(ordered);
  }
  return r;
}

int run_train(const TrainCli& cli) {
  auto resolved = resolve(cli);
  if (resolved.train.tasks.empty())
    throw mrc::ConfigError(
        "no tasks configured; pass --dream-train/--race-train, --demo-synthetic "
        "or a config file with a train.tasks list");

  std::vector<mrc::TaskData> tasks;
  mrc::RunManifest manifest;
  for (const auto& spec : resolved.train.tasks) {
    auto data = mrc::load_task(spec);
    mrc::DatasetFingerprint train_fp;
    train_fp.task = spec.name;
    train_fp.split = "train";
    if (spec.kind == mrc::Task::kSynthetic) {
      train_fp.path = "synthetic";
      train_fp.content_hash = mrc::hash_examples(data.train);
    } else {
      train_fp.path = spec.train_path;
      train_fp.content_hash = std::filesystem::is_directory(spec.train_path)
                                  ? mrc::hash_tree(spec.train_path)
                                  : mrc::hash_file(spec.train_path);
    }
    train_fp.items = data.train.size();
    manifest.datasets.push_back(std::move(train_fp));
    if (!data.dev.empty()) {
      mrc::DatasetFingerprint dev_fp;
      dev_fp.task = spec.name;
      dev_fp.split = "dev";
      if (spec.kind == mrc::Task::kSynthetic) {
        dev_fp.path = "synthetic";
        dev_fp.content_hash = mrc::hash_examples(data.dev);
      } else {
        dev_fp.path = spec.dev_path;
        dev_fp.content_hash = std::filesystem::is_directory(spec.dev_path)
                                  ? mrc::hash_tree(spec.dev_path)
                                  : mrc::hash_file(spec.dev_path);
      }
      dev_fp.items = data.dev.size();
      manifest.datasets.push_back(std::move(dev_fp));
    }
    tasks.push_back(std::move(data));
  }

  std::vector<mrc::McExample> corpus;
  for (const auto& t : tasks) corpus.insert(corpus.end(), t.train.begin(), t.train.end());
  auto vocab = mrc::build_vocab(corpus, resolved.model.vocab_size);
  resolved.model.vocab_size = vocab.size();
  resolved.model.validate();
  resolved.train.validate();

  const std::filesystem::path out_dir = cli.out_dir;
  std::filesystem::create_directories(out_dir);
  manifest.model = resolved.model;
  manifest.train = resolved.train;
  manifest.out_dir = out_dir.string();
  manifest.vocab_path = (out_dir / "vocab.txt").string();
  manifest.metrics_path = (out_dir / "metrics.jsonl").string();
  manifest.checkpoint_path = (out_dir / "best.ckpt").string();
  // The manifest lands before the first training step.
  mrc::write_manifest(out_dir / "manifest.json", manifest);
  vocab.save(out_dir / "vocab.txt");

  ordered_json echo;
  echo["model"] = mrc::model_config_to_json(resolved.model);
  echo["train"] = mrc::train_config_to_json(resolved.train);
  std::cout << echo.dump() << "\n";

  mrc::TrainHooks hooks;
  hooks.out_dir = out_dir;
  hooks.console = &std::cerr;
  auto result = mrc::train(resolved.train, resolved.model, tasks, vocab, hooks);

  ordered_json summary;
  summary["total_steps"] = result.total_steps;
  summary["warmup_steps"] = result.warmup_steps;
  summary["best_dev_accuracy"] = result.state.best_dev_accuracy;
  summary["best_dev_step"] = result.state.best_dev_step;
  summary["checkpoint"] = result.best_checkpoint.string();
  summary["metrics"] = (out_dir / "metrics.jsonl").string();
  std::cout << summary.dump() << "\n";
  return kOk;
}

struct EvalCli {
  std::string checkpoint;
  std::string vocab;
  std::string dream_path, race_path;
  bool synthetic = false;
  std::size_t synthetic_count = 300;
  std::size_t synthetic_options = 3;
  std::size_t synthetic_vocab = 40;
  std::uint64_t synthetic_seed = 99;
  std::string dump_path;
};

std::vector<mrc::McExample> eval_examples(const EvalCli& cli) {
  const int sources = (!cli.dream_path.empty() ? 1 : 0) +
                      (!cli.race_path.empty() ? 1 : 0) + (cli.synthetic ? 1 : 0);
  if (sources != 1)
    throw mrc::ConfigError("pass exactly one of --dream, --race or --synthetic");
  if (!cli.dream_path.empty()) return mrc::load_dream(cli.dream_path);
  if (!cli.race_path.empty()) return mrc::load_race(cli.race_path);
  return mrc::synthetic_task(cli.synthetic_count, cli.synthetic_options,
                             cli.synthetic_vocab, cli.synthetic_seed);
}

int run_eval(const EvalCli& cli, bool predictions_required) {
  auto loaded = mrc::load_checkpoint(cli.checkpoint);
  auto vocab = mrc::Vocab::load(cli.vocab);
  if (vocab.size() != loaded.meta.model.vocab_size)
    throw mrc::DataError("vocabulary has " + std::to_string(vocab.size()) +
                         " entries but the checkpoint was trained with " +
                         std::to_string(loaded.meta.model.vocab_size));
  auto examples = eval_examples(cli);
  auto questions =
      mrc::encode_questions(examples, vocab, loaded.meta.model.max_len);
  auto eval = mrc::evaluate(loaded.params, loaded.meta.model, questions);
  if (!cli.dump_path.empty())
    mrc::write_predictions(cli.dump_path, eval.predictions);
  else if (predictions_required)
    throw mrc::ConfigError("predict needs --out for the prediction dump");

  ordered_json out;
  out["accuracy"] = eval.accuracy;
  out["questions"] = questions.size();
  out["checkpoint_step"] = loaded.meta.step;
  out["checkpoint_dev_accuracy"] = loaded.meta.dev_accuracy;
  if (!cli.dump_path.empty()) out["predictions"] = cli.dump_path;
  std::cout << out.dump() << "\n";
  return kOk;
}

struct GradCheckCli {
  std::size_t seeds = 5;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradCheckCli& cli) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= cli.seeds; ++seed) {
    auto result = mrc::micro_grad_check(seed, cli.eps);
    worst = std::max(worst, result.max_rel_err);
    ordered_json line;
    line["seed"] = seed;
    line["max_rel_err"] = result.max_rel_err;
    line["scalars"] = result.scalars_checked;
    line["worst_param"] = result.worst_param;
    line["seconds"] = result.seconds;
    std::cout << line.dump() << "\n";
  }
  ordered_json summary;
  summary["seeds"] = cli.seeds;
  summary["worst_rel_err"] = worst;
  summary["tolerance"] = cli.tolerance;
  summary["pass"] = worst < cli.tolerance;
  std::cout << summary.dump() << "\n";
  return worst < cli.tolerance ? kOk : kGradCheckFailure;
}

struct StatsCli {
  std::string dream_path, race_path;
};

int run_stats(const StatsCli& cli) {
  if (cli.dream_path.empty() && cli.race_path.empty())
    throw mrc::ConfigError("pass --dream and/or --race");
  ordered_json out;
  if (!cli.dream_path.empty()) {
    mrc::LoadStats stats;
    auto examples = mrc::load_dream(cli.dream_path, &stats);
    out["dream"] = mrc::report_to_json(mrc::dataset_report("dream", examples, stats));
  }
  if (!cli.race_path.empty()) {
    mrc::LoadStats stats;
    auto examples = mrc::load_race(cli.race_path, &stats);
    out["race"] = mrc::report_to_json(mrc::dataset_report("race", examples, stats));
  }
  std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task trainer for multiple-choice reading comprehension"};
  app.require_subcommand(1);

  TrainCli train_cli;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train_cli.config_path, "JSON config file");
  train_cmd->add_option("--out", train_cli.out_dir, "Output directory")->required();
  train_cmd->add_option("--from-manifest", train_cli.from_manifest,
                        "Re-run a previous run's manifest");
  train_cmd->add_option("--tasks", train_cli.tasks_csv,
                        "Comma-separated task order; first is the primary task");
  train_cmd->add_option("--dream-train", train_cli.dream_train, "DREAM train JSON");
  train_cmd->add_option("--dream-dev", train_cli.dream_dev, "DREAM dev JSON");
  train_cmd->add_option("--race-train", train_cli.race_train, "RACE train directory");
  train_cmd->add_option("--race-dev", train_cli.race_dev, "RACE dev directory");
  train_cmd->add_flag("--demo-synthetic", train_cli.demo_synthetic,
                      "Add two built-in synthetic tasks (3- and 4-option)");
  train_cmd->add_option("--seed", train_cli.seed, "Seed for both model and trainer");
  train_cmd->add_option("--epochs", train_cli.epochs);
  train_cmd->add_option("--batch-size", train_cli.batch_size);
  train_cmd->add_option("--eval-every", train_cli.eval_every);
  train_cmd->add_option("--lr", train_cli.lr, "Peak learning rate");
  train_cmd->add_option("--weight-decay", train_cli.weight_decay);
  train_cmd->add_option("--clip-norm", train_cli.clip_norm);
  train_cmd->add_option("--warmup", train_cli.warmup, "Warmup fraction of total steps");
  train_cmd->add_option("--hidden", train_cli.hidden);
  train_cmd->add_option("--layers", train_cli.layers);
  train_cmd->add_option("--heads", train_cli.heads);
  train_cmd->add_option("--duma-heads", train_cli.duma_heads);
  train_cmd->add_option("--duma-head-dim", train_cli.duma_head_dim);
  train_cmd->add_option("--duma-depth", train_cli.duma_depth);
  train_cmd->add_option("--max-len", train_cli.max_len);
  train_cmd->add_option("--ff-width", train_cli.ff_width);
  train_cmd->add_option("--vocab-size", train_cli.vocab_size);
  train_cmd->add_option("--dropout", train_cli.dropout);
  train_cmd->add_option("--share-layers", train_cli.share_layers);
  train_cmd->add_option("--share-duma-directions", train_cli.share_duma);

  EvalCli eval_cli;
  auto add_eval_options = [&](CLI::App* cmd, bool with_dump_flag) {
    cmd->add_option("--checkpoint", eval_cli.checkpoint)->required();
    cmd->add_option("--vocab", eval_cli.vocab)->required();
    cmd->add_option("--dream", eval_cli.dream_path, "DREAM split JSON");
    cmd->add_option("--race", eval_cli.race_path, "RACE split directory");
    cmd->add_flag("--synthetic", eval_cli.synthetic, "Evaluate on synthetic data");
    cmd->add_option("--synthetic-count", eval_cli.synthetic_count);
    cmd->add_option("--synthetic-options", eval_cli.synthetic_options);
    cmd->add_option("--synthetic-vocab", eval_cli.synthetic_vocab);
    cmd->add_option("--synthetic-seed", eval_cli.synthetic_seed);
    if (with_dump_flag)
      cmd->add_option("--dump", eval_cli.dump_path, "Optional prediction JSONL");
    else
      cmd->add_option("--out", eval_cli.dump_path, "Prediction JSONL path");
  };
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_eval_options(eval_cmd, true);
  auto* predict_cmd = app.add_subcommand("predict", "Dump per-question predictions");
  add_eval_options(predict_cmd, false);

  GradCheckCli grad_cli;
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "Central-difference check of the micro model");
  grad_cmd->add_option("--seeds", grad_cli.seeds, "Number of seeds to run");
  grad_cmd->add_option("--eps", grad_cli.eps, "Finite-difference step");
  grad_cmd->add_option("--tolerance", grad_cli.tolerance);

  StatsCli stats_cli;
  auto* stats_cmd = app.add_subcommand("data-stats", "Dataset counts and lengths");
  stats_cmd->add_option("--dream", stats_cli.dream_path, "DREAM split JSON");
  stats_cmd->add_option("--race", stats_cli.race_path, "RACE split directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_cli);
    if (eval_cmd->parsed()) return run_eval(eval_cli, false);
    if (predict_cmd->parsed()) return run_eval(eval_cli, true);
    if (grad_cmd->parsed()) return run_gradcheck(grad_cli);
    if (stats_cmd->parsed()) return run_stats(stats_cli);
  } catch (const mrc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const mrc::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const mrc::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const mrc::EncodingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const mrc::Error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kUserError;
}
