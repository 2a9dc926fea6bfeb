#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mrc/init.hpp"
#include "mrc/model_config.hpp"
#include "mrc/tensor.hpp"

// Per-option scoring: one shared linear layer over each option's fused
// representation, softmax across the option set. The same (w, b) serves
// 3-option and 4-option questions, which is what lets every model part be
// shared across tasks.

namespace mrc {

template <class S>
struct ClassifierParams {
  Tensor<S> w;  // [2d]
  // Shared across the option set, so softmax cross-entropy is invariant to it
  // and its gradient is identically zero: it can never leave its zero init.
  // Kept in the scoring contract as a constant, not a trainable parameter.
  Tensor<S> b;  // [1]
};

template <class S>
ClassifierParams<S> init_classifier(const ModelConfig& cfg, Rng& rng) {
  ClassifierParams<S> p;
  auto m = detail::xavier<S>(rng, 2 * cfg.hidden, 1);
  p.w = Tensor<S>::from({2 * cfg.hidden}, std::vector<S>(m.value().begin(), m.value().end()));
  p.b = Tensor<S>::zeros({1});
  return p;
}

struct OptionScores {
  std::vector<double> logits;
  std::vector<double> probabilities;  // softmax over the option axis
  std::size_t predicted = 0;          // argmax, ties to the lowest index
};

// logit_i = w · fused_i + b, stacked over the option set.
template <class S>
Tensor<S> option_logits(Tape<S>& tp, const std::vector<Tensor<S>>& fused,
                        const ClassifierParams<S>& cls) {
  if (fused.size() < 2)
    throw DimensionError("option_logits: need at least 2 options, got " +
                         std::to_string(fused.size()));
  std::vector<Tensor<S>> logits;
  logits.reserve(fused.size());
  for (const auto& f : fused) {
    if (f.rank() != 1 || f.numel() != cls.w.numel())
      throw DimensionError("option_logits: fused width " + shape_str(f.shape()) +
                           " does not match classifier weight " +
                           shape_str(cls.w.shape()));
    logits.push_back(add(tp, dot(tp, cls.w, f), cls.b));
  }
  return stack_scalars(tp, logits);
}

template <class S>
OptionScores make_scores(std::span<const S> logits) {
  OptionScores s;
  s.logits.assign(logits.begin(), logits.end());
  s.probabilities = softmax_values(logits);
  s.predicted = 0;
  for (std::size_t i = 1; i < s.logits.size(); ++i)
    if (s.logits[i] > s.logits[s.predicted]) s.predicted = i;
  return s;
}

template <class S>
OptionScores score_options(Tape<S>& tp, const std::vector<Tensor<S>>& fused,
                           const ClassifierParams<S>& cls) {
  auto logits = option_logits(tp, fused, cls);
  return make_scores<S>(logits.value());
}

// -ln p(gold), computed in log space from the logits.
template <class S>
Tensor<S> cross_entropy(Tape<S>& tp, const Tensor<S>& logits, std::size_t gold) {
  return cross_entropy_with_logits(tp, logits, gold);
}

inline double accuracy(std::span<const std::size_t> predictions,
                       std::span<const std::size_t> golds) {
  if (predictions.size() != golds.size())
    throw DimensionError("accuracy: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(golds.size()) + " golds");
  if (predictions.empty()) throw DimensionError("accuracy: empty prediction list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == golds[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace mrc
