#pragma once

#include <cstdint>
#include <vector>

#include "mrc/text_pipeline.hpp"

namespace mrc {

// Separable synthetic task for overfit and chance-level checks: the context
// names exactly one keyword, the options are candidate keywords, and the gold
// option is the named one. Gold positions are uniform, so an untrained model
// sits at chance level.
std::vector<McExample> synthetic_task(std::size_t count, std::size_t num_options,
                                      std::size_t vocab_words, std::uint64_t seed);

}  // namespace mrc
