#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mrc/init.hpp"
#include "mrc/model_config.hpp"
#include "mrc/tensor.hpp"
#include "mrc/text_pipeline.hpp"

// Small pre-norm transformer encoder standing in for a pretrained language
// model. Optional cross-layer parameter sharing mirrors the architecture it
// replaces: one block's weights reused at every depth, gradients from all
// depths accumulating into the shared set.

namespace mrc {

template <class S>
struct EncoderBlock {
  // Attention projections. The key projection carries no bias: softmax is
  // invariant to a constant shift across keys, so a key bias is dead weight.
  Tensor<S> wq, bq, wk, wv, bv, wo, bo;  // [d×d] matrices, [d] biases
  Tensor<S> ln1_gain, ln1_bias;
  Tensor<S> w1, b1, w2, b2;  // feed-forward, [d×ff] / [ff] / [ff×d] / [d]
  Tensor<S> ln2_gain, ln2_bias;
};

template <class S>
struct EncoderParams {
  Tensor<S> token_embedding;     // [vocab×d]
  Tensor<S> position_embedding;  // [L×d]
  std::vector<EncoderBlock<S>> blocks;  // size 1 when layers are shared
  Tensor<S> final_gain, final_bias;
};

template <class S>
EncoderBlock<S> init_encoder_block(const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.hidden, ff = cfg.ff_width;
  EncoderBlock<S> b;
  b.wq = detail::xavier<S>(rng, d, d);
  b.bq = Tensor<S>::zeros({d});
  b.wk = detail::xavier<S>(rng, d, d);
  b.wv = detail::xavier<S>(rng, d, d);
  b.bv = Tensor<S>::zeros({d});
  b.wo = detail::xavier<S>(rng, d, d);
  b.bo = Tensor<S>::zeros({d});
  b.ln1_gain = Tensor<S>::full({d}, S(1));
  b.ln1_bias = Tensor<S>::zeros({d});
  b.w1 = detail::xavier<S>(rng, d, ff);
  b.b1 = Tensor<S>::zeros({ff});
  b.w2 = detail::xavier<S>(rng, ff, d);
  b.b2 = Tensor<S>::zeros({d});
  b.ln2_gain = Tensor<S>::full({d}, S(1));
  b.ln2_bias = Tensor<S>::zeros({d});
  return b;
}

template <class S>
EncoderParams<S> init_encoder(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams<S> p;
  p.token_embedding = detail::xavier<S>(rng, cfg.vocab_size, cfg.hidden);
  p.position_embedding = detail::xavier<S>(rng, cfg.max_len, cfg.hidden);
  const std::size_t block_count = cfg.share_layers ? 1 : cfg.layers;
  for (std::size_t i = 0; i < block_count; ++i)
    p.blocks.push_back(init_encoder_block<S>(cfg, rng));
  p.final_gain = Tensor<S>::full({cfg.hidden}, S(1));
  p.final_bias = Tensor<S>::zeros({cfg.hidden});
  return p;
}

// Collapses per-depth blocks into one aliased weight set.
template <class S>
EncoderParams<S> share_layers(EncoderParams<S> params, const ModelConfig& cfg) {
  if (!cfg.share_layers)
    throw ConfigError("share_layers: layer-sharing flag is not set");
  if (params.blocks.empty()) throw ConfigError("share_layers: no blocks");
  params.blocks.resize(1);
  return params;
}

// Multi-head attention over one sequence with a padding mask on the keys:
// padded positions are attended by nothing.
template <class S>
Tensor<S> self_attention(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& key_mask,
                         const EncoderBlock<S>& blk, std::size_t heads) {
  const std::size_t d = x.cols();
  const std::size_t dh = d / heads;
  auto q = add_bias(tp, matmul(tp, x, blk.wq), blk.bq);
  auto k = matmul(tp, x, blk.wk);
  auto v = add_bias(tp, matmul(tp, x, blk.wv), blk.bv);
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<S>> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(tp, q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(tp, k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(tp, v, h * dh, (h + 1) * dh);
    auto scores = scale(tp, matmul(tp, qh, transpose(tp, kh)), inv_sqrt);
    auto probs = masked_softmax(tp, scores, key_mask);
    per_head.push_back(matmul(tp, probs, vh));
  }
  return add_bias(tp, matmul(tp, concat_cols(tp, per_head), blk.wo), blk.bo);
}

// Contextualizes one padded instance: token+position embeddings followed by
// pre-norm blocks of masked self-attention and a GELU feed-forward, with a
// final layer norm. Output rows at padded positions are never consumed.
template <class S>
Tensor<S> encode(Tape<S>& tp, const EncodedInstance& instance,
                 const EncoderParams<S>& params, const ModelConfig& cfg,
                 Rng* dropout_rng = nullptr) {
  if (instance.token_ids.size() != cfg.max_len)
    throw DimensionError("encode: instance length " +
                         std::to_string(instance.token_ids.size()) +
                         " does not match configured max_len " +
                         std::to_string(cfg.max_len));
  if (instance.real_len == 0)
    throw MaskError("encode: instance " + instance.example_id + " is all padding");

  std::vector<S> maskv(cfg.max_len);
  for (std::size_t i = 0; i < cfg.max_len; ++i) maskv[i] = static_cast<S>(instance.mask[i]);
  auto key_mask = Tensor<S>::from({cfg.max_len}, std::move(maskv));

  auto x = add(tp, embedding(tp, params.token_embedding, instance.token_ids),
               params.position_embedding);
  if (dropout_rng && cfg.dropout > 0.0) x = dropout(tp, x, cfg.dropout, *dropout_rng);

  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    const auto& blk = params.blocks[params.blocks.size() == 1 ? 0 : layer];
    auto attn_in = layer_norm(tp, x, blk.ln1_gain, blk.ln1_bias);
    auto attn_out = self_attention(tp, attn_in, key_mask, blk, cfg.heads);
    if (dropout_rng && cfg.dropout > 0.0)
      attn_out = dropout(tp, attn_out, cfg.dropout, *dropout_rng);
    x = add(tp, x, attn_out);

    auto ff_in = layer_norm(tp, x, blk.ln2_gain, blk.ln2_bias);
    auto ff_hidden = gelu(tp, add_bias(tp, matmul(tp, ff_in, blk.w1), blk.b1));
    auto ff_out = add_bias(tp, matmul(tp, ff_hidden, blk.w2), blk.b2);
    if (dropout_rng && cfg.dropout > 0.0)
      ff_out = dropout(tp, ff_out, cfg.dropout, *dropout_rng);
    x = add(tp, x, ff_out);

    if (!x.all_finite())
      throw NumericError("encode: non-finite activation after layer " +
                         std::to_string(layer));
  }
  return layer_norm(tp, x, params.final_gain, params.final_bias);
}

}  // namespace mrc
