#pragma once

#include <cstdint>
#include <string>

#include "mrc/errors.hpp"

namespace mrc {

// Every architectural hyperparameter. The defaults are a toy scale that
// trains on a CPU in minutes; full-scale values (64 co-attention heads of
// dimension 64, sequences of 512) remain expressible.
struct ModelConfig {
  std::size_t vocab_size = 30000;
  std::size_t hidden = 128;        // d
  std::size_t layers = 4;          // encoder depth
  std::size_t heads = 4;           // encoder attention heads
  std::size_t duma_heads = 4;      // h
  std::size_t duma_head_dim = 32;  // d_k
  std::size_t max_len = 128;       // L
  std::size_t ff_width = 512;
  bool share_layers = true;  // one weight set reused at every depth
  bool share_duma_directions = false;
  std::size_t duma_depth = 1;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden == 0 || layers == 0 || heads == 0 || max_len == 0 || ff_width == 0)
      throw ConfigError("model config: extents must be positive");
    if (hidden % heads != 0)
      throw ConfigError("model config: hidden size " + std::to_string(hidden) +
                        " is not divisible by " + std::to_string(heads) + " heads");
    if (duma_heads == 0 || duma_head_dim == 0)
      throw ConfigError("model config: DUMA heads and head dim must be positive");
    if (duma_depth == 0) throw ConfigError("model config: duma_depth must be >= 1");
    if (vocab_size < 5)
      throw ConfigError("model config: vocab_size must cover the special tokens");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("model config: dropout must be in [0, 1)");
  }

  // Small configuration used by gradient checks: full architecture, tiny
  // extents, so central differences over every scalar stay cheap.
  static ModelConfig micro(std::uint64_t seed = 0) {
    ModelConfig c;
    c.vocab_size = 32;
    c.hidden = 16;
    c.layers = 2;
    c.heads = 2;
    c.duma_heads = 2;
    c.duma_head_dim = 8;
    c.max_len = 16;
    c.ff_width = 32;
    c.share_layers = false;
    c.seed = seed;
    return c;
  }
};

}  // namespace mrc
