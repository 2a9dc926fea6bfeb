#pragma once

#include <cmath>
#include <vector>

#include "mrc/init.hpp"
#include "mrc/model_config.hpp"
#include "mrc/tensor.hpp"
#include "mrc/text_pipeline.hpp"

// Dual multi-head co-attention between the context segment and the
// question-answer segment of an encoded sequence: split at the boundary sep,
// attend both directions, mean-pool each side and concatenate.

namespace mrc {

template <class S>
struct DumaDirection {
  Tensor<S> wq, wk, wv;  // [d × h·d_k]
  Tensor<S> wo;          // [h·d_k × d]
};

// One direction set when directions share parameters, otherwise two:
// dirs[0] takes queries from the context, dirs[1] from the question-answer.
template <class S>
struct DumaParams {
  std::vector<DumaDirection<S>> dirs;
};

template <class S>
DumaParams<S> init_duma(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden, proj = cfg.duma_heads * cfg.duma_head_dim;
  DumaParams<S> p;
  const std::size_t sets = cfg.share_duma_directions ? 1 : 2;
  for (std::size_t i = 0; i < sets; ++i) {
    DumaDirection<S> dir;
    dir.wq = detail::xavier<S>(rng, d, proj);
    dir.wk = detail::xavier<S>(rng, d, proj);
    dir.wv = detail::xavier<S>(rng, d, proj);
    dir.wo = detail::xavier<S>(rng, proj, d);
    p.dirs.push_back(std::move(dir));
  }
  return p;
}

template <class S>
struct SplitSequence {
  Tensor<S> context, qa;            // row slices of the encoder output
  Tensor<S> context_mask, qa_mask;  // all ones; padding was sliced away
};

// Context side is positions 1..boundary-1 (cls and the boundary sep are
// excluded); the qa side runs from boundary+1 to the last real token, so the
// trailing seps stay inside it. Padded rows are excluded by construction.
template <class S>
SplitSequence<S> split_sequence(Tape<S>& tp, const Tensor<S>& hidden,
                                const EncodedInstance& instance) {
  const std::size_t b = instance.boundary;
  const std::size_t real = instance.real_len;
  if (b + 1 >= real || b < 1)
    throw SplitError("split_sequence: instance " + instance.example_id +
                     " has an empty question-answer side");
  if (b == 1)
    throw SplitError("split_sequence: instance " + instance.example_id +
                     " has an empty context side");
  SplitSequence<S> out;
  out.context = slice_rows(tp, hidden, 1, b);
  out.qa = slice_rows(tp, hidden, b + 1, real);
  out.context_mask = Tensor<S>::full({b - 1}, S(1));
  out.qa_mask = Tensor<S>::full({real - b - 1}, S(1));
  return out;
}

// Multi-head cross attention: queries projected from one side, keys and
// values from the other; per head, softmax(QKᵀ/√d_k) over unmasked key
// positions, then the weighted value sum, heads concatenated and projected
// back to width d.
template <class S>
Tensor<S> coattend(Tape<S>& tp, const Tensor<S>& queries_from,
                   const Tensor<S>& keys_values_from, const Tensor<S>& kv_mask,
                   const DumaDirection<S>& dir, std::size_t heads,
                   std::size_t head_dim) {
  auto q = matmul(tp, queries_from, dir.wq);
  auto k = matmul(tp, keys_values_from, dir.wk);
  auto v = matmul(tp, keys_values_from, dir.wv);
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  std::vector<Tensor<S>> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(tp, q, h * head_dim, (h + 1) * head_dim);
    auto kh = slice_cols(tp, k, h * head_dim, (h + 1) * head_dim);
    auto vh = slice_cols(tp, v, h * head_dim, (h + 1) * head_dim);
    auto scores = scale(tp, matmul(tp, qh, transpose(tp, kh)), inv_sqrt);
    auto probs = masked_softmax(tp, scores, kv_mask);
    per_head.push_back(matmul(tp, probs, vh));
  }
  return matmul(tp, concat_cols(tp, per_head), dir.wo);
}

// Full DUMA block over one instance: both directions, optional stacking with
// each side's attended sequence feeding the next round, pooling only after
// the last round, concatenated as [pooled context side, pooled qa side].
template <class S>
Tensor<S> duma_forward(Tape<S>& tp, const Tensor<S>& hidden,
                       const EncodedInstance& instance, const DumaParams<S>& params,
                       const ModelConfig& cfg) {
  auto split = split_sequence(tp, hidden, instance);
  const auto& ctx_dir = params.dirs.front();
  const auto& qa_dir = params.dirs.back();
  Tensor<S> ctx = split.context, qa = split.qa;
  for (std::size_t round = 0; round < cfg.duma_depth; ++round) {
    auto ctx_next =
        coattend(tp, ctx, qa, split.qa_mask, ctx_dir, cfg.duma_heads, cfg.duma_head_dim);
    auto qa_next = coattend(tp, qa, ctx, split.context_mask, qa_dir, cfg.duma_heads,
                            cfg.duma_head_dim);
    ctx = ctx_next;
    qa = qa_next;
  }
  auto pooled_ctx = mean_pool(tp, ctx, split.context_mask);
  auto pooled_qa = mean_pool(tp, qa, split.qa_mask);
  return concat(tp, pooled_ctx, pooled_qa);
}

}  // namespace mrc
