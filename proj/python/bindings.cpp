#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mrc/checkpoint.hpp"
#include "mrc/micro_check.hpp"
#include "mrc/model.hpp"
#include "mrc/stats.hpp"
#include "mrc/synthetic.hpp"
#include "mrc/trainer.hpp"

namespace py = pybind11;

namespace {

// numpy <-> Tensor<double>, 1-d or 2-d.
mrc::Tensor<double> tensor_from_array(const py::array_t<double>& arr) {
  auto buf = arr.request();
  if (buf.ndim != 1 && buf.ndim != 2)
    throw mrc::DimensionError("expected a 1-d or 2-d array, got ndim=" +
                              std::to_string(buf.ndim));
  mrc::Shape shape;
  for (py::ssize_t i = 0; i < buf.ndim; ++i)
    shape.push_back(static_cast<std::size_t>(buf.shape[i]));
  auto contiguous = py::array_t<double, py::array::c_style | py::array::forcecast>(arr);
  std::vector<double> values(static_cast<std::size_t>(contiguous.size()));
  std::copy(contiguous.data(), contiguous.data() + contiguous.size(), values.begin());
  return mrc::Tensor<double>::from(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const mrc::Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  auto buf = arr.mutable_data();
  auto v = t.value();
  std::copy(v.begin(), v.end(), buf);
  return arr;
}

// Owns float parameters plus the config they were built with.
struct PyModel {
  mrc::ModelConfig config;
  mrc::ModelParams<float> params;

  explicit PyModel(const mrc::ModelConfig& cfg)
      : config(cfg), params(mrc::init_model<float>(cfg)) {}
  PyModel(const mrc::ModelConfig& cfg, mrc::ModelParams<float> p)
      : config(cfg), params(std::move(p)) {}

  py::dict predict(const std::vector<mrc::EncodedInstance>& options) const {
    auto scores = mrc::predict_question(params, config, options);
    py::dict out;
    out["predicted"] = scores.predicted;
    out["logits"] = scores.logits;
    out["probabilities"] = scores.probabilities;
    return out;
  }

  py::dict evaluate(const std::vector<mrc::McExample>& examples,
                    const mrc::Vocab& vocab) const {
    auto questions = mrc::encode_questions(examples, vocab, config.max_len);
    auto eval = mrc::evaluate(params, config, questions);
    py::list predictions;
    for (const auto& p : eval.predictions) {
      py::dict d;
      d["example_id"] = p.example_id;
      d["predicted"] = p.predicted;
      d["gold"] = p.gold;
      d["probabilities"] = p.probabilities;
      predictions.append(std::move(d));
    }
    py::dict out;
    out["accuracy"] = eval.accuracy;
    out["predictions"] = std::move(predictions);
    return out;
  }

  std::size_t parameter_count() const { return params.parameter_count(); }
};

py::dict metrics_to_dict(const mrc::MetricsRecord& m) {
  py::dict d;
  d["step"] = m.step;
  d["task"] = m.task;
  d["lr"] = m.lr;
  d["train_loss"] = m.train_loss;
  py::dict dev;
  for (const auto& [name, acc] : m.dev_accuracy) dev[py::str(name)] = acc;
  d["dev_acc"] = std::move(dev);
  return d;
}

}  // namespace

PYBIND11_MODULE(mcmrc, m) {
  m.doc() =
      "Multiple-choice reading comprehension at toy scale: transformer "
      "encoder, dual co-attention fusion, per-option classifier, and a "
      "multi-task trainer with proportional batch sampling.";

  py::register_exception<mrc::Error>(m, "MrcError");

  py::class_<mrc::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("micro", &mrc::ModelConfig::micro, py::arg("seed") = 0)
      .def_readwrite("vocab_size", &mrc::ModelConfig::vocab_size)
      .def_readwrite("hidden", &mrc::ModelConfig::hidden)
      .def_readwrite("layers", &mrc::ModelConfig::layers)
      .def_readwrite("heads", &mrc::ModelConfig::heads)
      .def_readwrite("duma_heads", &mrc::ModelConfig::duma_heads)
      .def_readwrite("duma_head_dim", &mrc::ModelConfig::duma_head_dim)
      .def_readwrite("max_len", &mrc::ModelConfig::max_len)
      .def_readwrite("ff_width", &mrc::ModelConfig::ff_width)
      .def_readwrite("share_layers", &mrc::ModelConfig::share_layers)
      .def_readwrite("share_duma_directions", &mrc::ModelConfig::share_duma_directions)
      .def_readwrite("duma_depth", &mrc::ModelConfig::duma_depth)
      .def_readwrite("dropout", &mrc::ModelConfig::dropout)
      .def_readwrite("seed", &mrc::ModelConfig::seed);

  py::class_<mrc::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &mrc::TrainConfig::batch_size)
      .def_readwrite("peak_lr", &mrc::TrainConfig::peak_lr)
      .def_readwrite("weight_decay", &mrc::TrainConfig::weight_decay)
      .def_readwrite("clip_norm", &mrc::TrainConfig::clip_norm)
      .def_readwrite("epochs", &mrc::TrainConfig::epochs)
      .def_readwrite("warmup_fraction", &mrc::TrainConfig::warmup_fraction)
      .def_readwrite("eval_every", &mrc::TrainConfig::eval_every)
      .def_readwrite("seed", &mrc::TrainConfig::seed);

  py::class_<mrc::McExample>(m, "McExample")
      .def(py::init<>())
      .def_readwrite("context", &mrc::McExample::context)
      .def_readwrite("question", &mrc::McExample::question)
      .def_readwrite("options", &mrc::McExample::options)
      .def_readwrite("gold", &mrc::McExample::gold)
      .def_readwrite("example_id", &mrc::McExample::example_id)
      .def("__repr__", [](const mrc::McExample& ex) {
        return "<McExample " + ex.example_id + " options=" +
               std::to_string(ex.options.size()) + " gold=" +
               std::to_string(ex.gold) + ">";
      });

  py::class_<mrc::EncodedInstance>(m, "EncodedInstance")
      .def_readonly("token_ids", &mrc::EncodedInstance::token_ids)
      .def_property_readonly("mask",
                             [](const mrc::EncodedInstance& inst) {
                               std::vector<int> mask(inst.mask.begin(), inst.mask.end());
                               return mask;
                             })
      .def_readonly("boundary", &mrc::EncodedInstance::boundary)
      .def_readonly("real_len", &mrc::EncodedInstance::real_len)
      .def_readonly("gold", &mrc::EncodedInstance::gold)
      .def_readonly("option_index", &mrc::EncodedInstance::option_index)
      .def_readonly("example_id", &mrc::EncodedInstance::example_id);

  py::class_<mrc::Vocab>(m, "Vocab")
      .def(py::init<>())
      .def("__len__", &mrc::Vocab::size)
      .def("id", &mrc::Vocab::id)
      .def("token", &mrc::Vocab::token)
      .def("save", &mrc::Vocab::save)
      .def_static("load", &mrc::Vocab::load);

  m.def("tokenize", [](const std::string& text) { return mrc::tokenize(text); },
        py::arg("text"), "Lowercased words and single-character punctuation tokens");
  m.def(
      "build_vocab",
      [](const std::vector<mrc::McExample>& corpus, std::size_t max_size) {
        return mrc::build_vocab(corpus, max_size);
      },
      py::arg("corpus"), py::arg("max_size") = 30000);
  m.def("load_dream",
        [](const std::filesystem::path& p) { return mrc::load_dream(p); },
        py::arg("path"));
  m.def("load_race", [](const std::filesystem::path& p) { return mrc::load_race(p); },
        py::arg("path"));
  m.def("encode_example", &mrc::encode_example, py::arg("example"), py::arg("vocab"),
        py::arg("max_len"));
  m.def("decode", &mrc::decode, py::arg("instance"), py::arg("vocab"));
  m.def("synthetic_task", &mrc::synthetic_task, py::arg("count"),
        py::arg("num_options") = 3, py::arg("vocab_words") = 40, py::arg("seed") = 0);

  m.def(
      "masked_softmax",
      [](const py::array_t<double>& logits, const py::array_t<double>& mask) {
        mrc::Tape<double> tape;
        return array_from_tensor(
            mrc::masked_softmax(tape, tensor_from_array(logits), tensor_from_array(mask)));
      },
      py::arg("logits"), py::arg("mask"),
      "Row softmax with exact zeros on masked positions");
  m.def(
      "mean_pool",
      [](const py::array_t<double>& seq, const py::array_t<double>& mask) {
        mrc::Tape<double> tape;
        return array_from_tensor(
            mrc::mean_pool(tape, tensor_from_array(seq), tensor_from_array(mask)));
      },
      py::arg("seq"), py::arg("mask"), "Mean over unmasked rows");
  m.def(
      "cross_entropy",
      [](const py::array_t<double>& logits, std::size_t gold) {
        mrc::Tape<double> tape;
        return mrc::cross_entropy(tape, tensor_from_array(logits), gold).item();
      },
      py::arg("logits"), py::arg("gold"),
      "-ln p(gold) computed in log space from the logits");
  m.def("linear_schedule", &mrc::linear_schedule, py::arg("step"),
        py::arg("total_steps"), py::arg("warmup_steps"), py::arg("peak_lr"));

  py::class_<mrc::ProportionalSampler>(m, "ProportionalSampler")
      .def(py::init<std::vector<std::size_t>, std::size_t, std::uint64_t>(),
           py::arg("sizes"), py::arg("batch_size"), py::arg("seed") = 0)
      .def("next", [](mrc::ProportionalSampler& s) {
        auto batch = s.next();
        return py::make_tuple(batch.task, batch.indices);
      });

  m.def(
      "micro_grad_check",
      [](std::uint64_t seed, double eps) {
        auto r = mrc::micro_grad_check(seed, eps);
        py::dict d;
        d["max_rel_err"] = r.max_rel_err;
        d["scalars_checked"] = r.scalars_checked;
        d["worst_param"] = r.worst_param;
        d["seconds"] = r.seconds;
        return d;
      },
      py::arg("seed") = 1, py::arg("eps") = 1e-5,
      "64-bit central-difference check of the full micro model");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const mrc::ModelConfig&>(), py::arg("config"))
      .def("predict", &PyModel::predict, py::arg("options"),
           "Scores one question's encoded options")
      .def("evaluate", &PyModel::evaluate, py::arg("examples"), py::arg("vocab"))
      .def("parameter_count", &PyModel::parameter_count)
      .def_readonly("config", &PyModel::config);

  m.def(
      "train",
      [](const mrc::TrainConfig& tcfg, const mrc::ModelConfig& mcfg,
         const std::vector<std::tuple<std::string, std::vector<mrc::McExample>,
                                      std::vector<mrc::McExample>>>& tasks,
         const mrc::Vocab& vocab, const std::string& out_dir) {
        std::vector<mrc::TaskData> data;
        for (const auto& [name, train_split, dev_split] : tasks)
          data.push_back({name, train_split, dev_split});
        mrc::TrainHooks hooks;
        if (!out_dir.empty()) hooks.out_dir = out_dir;
        auto cfg = mcfg;
        cfg.vocab_size = vocab.size();
        auto result = mrc::train(tcfg, cfg, data, vocab, hooks);
        py::list metrics;
        for (const auto& rec : result.state.metrics) metrics.append(metrics_to_dict(rec));
        py::dict summary;
        summary["total_steps"] = result.total_steps;
        summary["warmup_steps"] = result.warmup_steps;
        summary["best_dev_accuracy"] = result.state.best_dev_accuracy;
        summary["best_dev_step"] = result.state.best_dev_step;
        summary["metrics"] = std::move(metrics);
        summary["checkpoint"] = result.best_checkpoint.string();
        return py::make_tuple(PyModel(cfg, std::move(result.state.params)), summary);
      },
      py::arg("train_config"), py::arg("model_config"), py::arg("tasks"),
      py::arg("vocab"), py::arg("out_dir") = "",
      "Joint training over (name, train, dev) task triples; returns "
      "(model, summary)");

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto loaded = mrc::load_checkpoint(path);
        py::dict meta;
        meta["step"] = loaded.meta.step;
        meta["dev_accuracy"] = loaded.meta.dev_accuracy;
        meta["best_step"] = loaded.meta.best_step;
        return py::make_tuple(PyModel(loaded.meta.model, std::move(loaded.params)),
                              meta);
      },
      py::arg("path"));
}
