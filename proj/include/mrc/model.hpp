#pragma once

#include <span>
#include <string>
#include <vector>

#include "mrc/classifier.hpp"
#include "mrc/duma.hpp"
#include "mrc/encoder.hpp"

namespace mrc {

// Named view of one parameter tensor. decay marks tensors that receive
// weight decay: matrices do, biases and layer-norm parameters do not.
template <class S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;  // shares storage with the owning bundle
  bool decay = false;
};

template <class S>
struct ModelParams {
  EncoderParams<S> encoder;
  DumaParams<S> duma;
  ClassifierParams<S> classifier;

  // Stable enumeration order; checkpoints and optimizer moments rely on it.
  std::vector<NamedParam<S>> named() const {
    std::vector<NamedParam<S>> out;
    out.push_back({"encoder.token_embedding", encoder.token_embedding, true});
    out.push_back({"encoder.position_embedding", encoder.position_embedding, true});
    for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
      const auto& b = encoder.blocks[i];
      const std::string p = "encoder.block" + std::to_string(i) + ".";
      out.push_back({p + "wq", b.wq, true});
      out.push_back({p + "bq", b.bq, false});
      out.push_back({p + "wk", b.wk, true});
      out.push_back({p + "wv", b.wv, true});
      out.push_back({p + "bv", b.bv, false});
      out.push_back({p + "wo", b.wo, true});
      out.push_back({p + "bo", b.bo, false});
      out.push_back({p + "ln1_gain", b.ln1_gain, false});
      out.push_back({p + "ln1_bias", b.ln1_bias, false});
      out.push_back({p + "ff_w1", b.w1, true});
      out.push_back({p + "ff_b1", b.b1, false});
      out.push_back({p + "ff_w2", b.w2, true});
      out.push_back({p + "ff_b2", b.b2, false});
      out.push_back({p + "ln2_gain", b.ln2_gain, false});
      out.push_back({p + "ln2_bias", b.ln2_bias, false});
    }
    out.push_back({"encoder.final_gain", encoder.final_gain, false});
    out.push_back({"encoder.final_bias", encoder.final_bias, false});
    for (std::size_t i = 0; i < duma.dirs.size(); ++i) {
      const auto& d = duma.dirs[i];
      const std::string p = "duma.dir" + std::to_string(i) + ".";
      out.push_back({p + "wq", d.wq, true});
      out.push_back({p + "wk", d.wk, true});
      out.push_back({p + "wv", d.wv, true});
      out.push_back({p + "wo", d.wo, true});
    }
    out.push_back({"classifier.w", classifier.w, true});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.tensor.numel();
    return n;
  }

  void mark_requires_grad() const {
    for (auto& p : named()) p.tensor.set_requires_grad(true);
  }

  void zero_grads() const {
    for (auto& p : named()) p.tensor.zero_grad();
  }

  template <class T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    out.encoder.token_embedding = encoder.token_embedding.template cast<T>();
    out.encoder.position_embedding = encoder.position_embedding.template cast<T>();
    for (const auto& b : encoder.blocks) {
      EncoderBlock<T> nb;
      nb.wq = b.wq.template cast<T>();
      nb.bq = b.bq.template cast<T>();
      nb.wk = b.wk.template cast<T>();
      nb.wv = b.wv.template cast<T>();
      nb.bv = b.bv.template cast<T>();
      nb.wo = b.wo.template cast<T>();
      nb.bo = b.bo.template cast<T>();
      nb.ln1_gain = b.ln1_gain.template cast<T>();
      nb.ln1_bias = b.ln1_bias.template cast<T>();
      nb.w1 = b.w1.template cast<T>();
      nb.b1 = b.b1.template cast<T>();
      nb.w2 = b.w2.template cast<T>();
      nb.b2 = b.b2.template cast<T>();
      nb.ln2_gain = b.ln2_gain.template cast<T>();
      nb.ln2_bias = b.ln2_bias.template cast<T>();
      out.encoder.blocks.push_back(std::move(nb));
    }
    out.encoder.final_gain = encoder.final_gain.template cast<T>();
    out.encoder.final_bias = encoder.final_bias.template cast<T>();
    for (const auto& d : duma.dirs) {
      DumaDirection<T> nd;
      nd.wq = d.wq.template cast<T>();
      nd.wk = d.wk.template cast<T>();
      nd.wv = d.wv.template cast<T>();
      nd.wo = d.wo.template cast<T>();
      out.duma.dirs.push_back(std::move(nd));
    }
    out.classifier.w = classifier.w.template cast<T>();
    out.classifier.b = classifier.b.template cast<T>();
    return out;
  }
};

template <class S>
ModelParams<S> init_model(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  ModelParams<S> p;
  p.encoder = init_encoder<S>(cfg, rng);
  p.duma = init_duma<S>(cfg, rng);
  p.classifier = init_classifier<S>(cfg, rng);
  return p;
}

// Encoder → DUMA → classifier over every option of one question.
template <class S>
Tensor<S> question_logits(Tape<S>& tp, const ModelParams<S>& params,
                          const ModelConfig& cfg,
                          std::span<const EncodedInstance> options,
                          Rng* dropout_rng = nullptr) {
  std::vector<Tensor<S>> fused;
  fused.reserve(options.size());
  for (const auto& inst : options) {
    auto hidden = encode(tp, inst, params.encoder, cfg, dropout_rng);
    fused.push_back(duma_forward(tp, hidden, inst, params.duma, cfg));
  }
  return option_logits(tp, fused, params.classifier);
}

// Forward-only pass for one question; dropout stays off.
template <class S>
OptionScores predict_question(const ModelParams<S>& params, const ModelConfig& cfg,
                              std::span<const EncodedInstance> options) {
  Tape<S> tape;
  auto logits = question_logits(tape, params, cfg, options);
  return make_scores<S>(logits.value());
}

}  // namespace mrc
