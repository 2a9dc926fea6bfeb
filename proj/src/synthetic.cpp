#include "mrc/synthetic.hpp"

#include <string>

#include "mrc/rng.hpp"

namespace mrc {

std::vector<McExample> synthetic_task(std::size_t count, std::size_t num_options,
                                      std::size_t vocab_words, std::uint64_t seed) {
  if (num_options < 2) throw ConfigError("synthetic_task: need at least 2 options");
  const std::size_t keywords = std::max<std::size_t>(num_options + 2, 8);
  Rng rng(seed);

  auto keyword = [](std::size_t i) { return "kw" + std::to_string(i); };
  auto filler = [&](std::size_t i) { return "w" + std::to_string(i % std::max<std::size_t>(vocab_words, 1)); };

  std::vector<McExample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    // Distinct keyword set for this question.
    std::vector<std::size_t> pool(keywords);
    for (std::size_t i = 0; i < keywords; ++i) pool[i] = i;
    rng.shuffle(pool);
    pool.resize(num_options);

    McExample ex;
    ex.task = Task::kSynthetic;
    const std::size_t gold_pos = rng.below(num_options);
    const std::size_t target = pool[gold_pos];

    std::string ctx = "the marker today is " + keyword(target);
    const std::size_t extra = 2 + rng.below(4);
    for (std::size_t i = 0; i < extra; ++i) ctx += " " + filler(rng.below(vocab_words));
    ex.context = {ctx};
    ex.question = "which marker is named";
    for (std::size_t i = 0; i < num_options; ++i) ex.options.push_back(keyword(pool[i]));
    ex.gold = gold_pos;
    ex.example_id = "syn-" + std::to_string(num_options) + "-" + std::to_string(n);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace mrc
