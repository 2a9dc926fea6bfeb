#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrc/errors.hpp"

namespace mrc {

enum class Task { kDream, kRace, kSynthetic };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// One multiple-choice item. The context is an ordered list of text units:
// dialogue turns for DREAM, a single passage for RACE.
struct McExample {
  Task task = Task::kSynthetic;
  std::vector<std::string> context;
  std::string question;
  std::vector<std::string> options;  // 3 for DREAM, 4 for RACE
  std::size_t gold = 0;
  std::string example_id;
};

// Word-level vocabulary standing in for a pretrained subword tokenizer.
// Specials occupy fixed low ids; unknown tokens map to <unk>.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocab();

  std::size_t size() const { return id_to_token_.size(); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  void add(const std::string& token);

  // Plain text, one token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// One option of one question, packed as
//   <cls> context <sep> question <sep> option <sep> <pad>...
// and padded to a fixed length. boundary is the index of the sep that closes
// the context segment.
struct EncodedInstance {
  std::vector<int> token_ids;
  std::vector<std::uint8_t> mask;  // 1 on real tokens, 0 on padding
  std::size_t boundary = 0;
  std::size_t real_len = 0;
  bool gold = false;
  std::size_t option_index = 0;
  std::string example_id;
};

struct LoadStats {
  std::size_t units = 0;  // dialogues for DREAM, passages for RACE
  std::size_t questions = 0;
  std::size_t files = 0;
  std::size_t warnings = 0;
};

// Lowercased words and single-character punctuation tokens.
std::vector<std::string> tokenize(std::string_view text);

// DREAM split: one JSON file, a list of [turns, questions, id] entries.
std::vector<McExample> load_dream(const std::filesystem::path& file,
                                  LoadStats* stats = nullptr);

// RACE split: a directory tree (high/middle) of per-passage JSON files.
std::vector<McExample> load_race(const std::filesystem::path& dir,
                                 LoadStats* stats = nullptr);

// Frequency-ranked vocabulary, lexicographic tie-break, truncated to max_size
// including the four specials.
Vocab build_vocab(std::span<const McExample> corpus, std::size_t max_size);

// One EncodedInstance per option. Over-long context is truncated from the
// front; the option tail goes next and the question tail last.
std::vector<EncodedInstance> encode_example(const McExample& ex, const Vocab& vocab,
                                            std::size_t max_len);

// Tokens of the unpadded sequence, specials included.
std::vector<std::string> decode(const EncodedInstance& instance, const Vocab& vocab);

}  // namespace mrc
