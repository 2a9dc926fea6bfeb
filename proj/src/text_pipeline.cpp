#include "mrc/text_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

namespace mrc {

using nlohmann::json;

std::string task_name(Task t) {
  switch (t) {
    case Task::kDream: return "dream";
    case Task::kRace: return "race";
    case Task::kSynthetic: return "synthetic";
  }
  return "unknown";
}

Task task_from_name(const std::string& name) {
  if (name == "dream") return Task::kDream;
  if (name == "race") return Task::kRace;
  if (name == "synthetic") return Task::kSynthetic;
  throw ConfigError("unknown task name: " + name);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocab::Vocab() {
  id_to_token_ = {"<pad>", "<unk>", "<cls>", "<sep>"};
  for (std::size_t i = 0; i < id_to_token_.size(); ++i)
    token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
}

int Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(id_to_token_.size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocab::add(const std::string& token) {
  if (token_to_id_.contains(token)) return;
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  Vocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < 4) {
      if (line != v.id_to_token_[line_no])
        throw DataError("vocabulary file " + path.string() + " line " +
                        std::to_string(line_no) + " is not the expected special token");
    } else {
      v.add(line);
    }
    ++line_no;
  }
  if (line_no < 4)
    throw DataError("vocabulary file " + path.string() + " is missing special tokens");
  return v;
}

namespace {

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + " at byte " +
                    std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace

std::vector<McExample> load_dream(const std::filesystem::path& file, LoadStats* stats) {
  const json root = parse_json_file(file);
  if (!root.is_array())
    throw DataError("DREAM file " + file.string() + ": top level must be a list");
  std::vector<McExample> examples;
  LoadStats local;
  local.files = 1;
  for (const auto& entry : root) {
    if (!entry.is_array() || entry.size() != 3)
      throw DataError("DREAM file " + file.string() +
                      ": each entry must be [turns, questions, id]");
    const std::string entry_id = entry[2].get<std::string>();
    std::vector<std::string> turns;
    for (const auto& t : entry[0]) turns.push_back(t.get<std::string>());
    ++local.units;
    std::size_t qi = 0;
    for (const auto& q : entry[1]) {
      McExample ex;
      ex.task = Task::kDream;
      ex.context = turns;
      ex.question = q.at("question").get<std::string>();
      for (const auto& c : q.at("choice")) ex.options.push_back(c.get<std::string>());
      if (ex.options.size() != 3)
        throw DataError("DREAM example " + entry_id + ": expected 3 options, got " +
                        std::to_string(ex.options.size()));
      const std::string answer = q.at("answer").get<std::string>();
      auto it = std::find(ex.options.begin(), ex.options.end(), answer);
      if (it == ex.options.end())
        throw DataError("DREAM example " + entry_id +
                        ": answer string not among the choices");
      ex.gold = static_cast<std::size_t>(it - ex.options.begin());
      ex.example_id = entry_id + ":q" + std::to_string(qi++);
      examples.push_back(std::move(ex));
      ++local.questions;
    }
  }
  if (stats) *stats = local;
  return examples;
}

std::vector<McExample> load_race(const std::filesystem::path& dir, LoadStats* stats) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("RACE path is not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".json" || ext == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<McExample> examples;
  LoadStats local;
  if (files.empty()) ++local.warnings;
  for (const auto& path : files) {
    const json doc = parse_json_file(path);
    ++local.files;
    ++local.units;
    const std::string article = doc.at("article").get<std::string>();
    const std::string file_id =
        doc.contains("id") ? doc["id"].get<std::string>() : path.filename().string();
    const auto& questions = doc.at("questions");
    const auto& options = doc.at("options");
    const auto& answers = doc.at("answers");
    if (questions.size() != options.size() || questions.size() != answers.size())
      throw DataError("RACE file " + path.string() +
                      ": questions/options/answers lengths differ");
    for (std::size_t qi = 0; qi < questions.size(); ++qi) {
      McExample ex;
      ex.task = Task::kRace;
      ex.context = {article};
      ex.question = questions[qi].get<std::string>();
      for (const auto& o : options[qi]) ex.options.push_back(o.get<std::string>());
      if (ex.options.size() != 4)
        throw DataError("RACE file " + path.string() + " question " +
                        std::to_string(qi) + ": expected 4 options, got " +
                        std::to_string(ex.options.size()));
      const std::string letter = answers[qi].get<std::string>();
      if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'D')
        throw DataError("RACE file " + path.string() + " question " +
                        std::to_string(qi) + ": answer '" + letter +
                        "' is not a letter A-D");
      ex.gold = static_cast<std::size_t>(letter[0] - 'A');
      ex.example_id = file_id + ":q" + std::to_string(qi);
      examples.push_back(std::move(ex));
      ++local.questions;
    }
  }
  if (stats) *stats = local;
  return examples;
}

Vocab build_vocab(std::span<const McExample> corpus, std::size_t max_size) {
  if (max_size < 5)
    throw ConfigError("vocabulary size must be at least 5 (specials plus one token)");
  std::unordered_map<std::string, std::size_t> freq;
  auto count = [&](std::string_view text) {
    for (auto& t : tokenize(text)) ++freq[t];
  };
  for (const auto& ex : corpus) {
    for (const auto& turn : ex.context) count(turn);
    count(ex.question);
    for (const auto& o : ex.options) count(o);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [token, n] : ranked) {
    if (v.size() >= max_size) break;
    v.add(token);
  }
  return v;
}

std::vector<EncodedInstance> encode_example(const McExample& ex, const Vocab& vocab,
                                            std::size_t max_len) {
  if (max_len < 16)
    throw EncodingError("max_len " + std::to_string(max_len) +
                        " is too small; need at least 16");
  std::string joined;
  for (std::size_t i = 0; i < ex.context.size(); ++i) {
    if (i) joined += ' ';
    joined += ex.context[i];
  }
  const auto ctx = tokenize(joined);
  const auto q = tokenize(ex.question);

  std::vector<EncodedInstance> instances;
  instances.reserve(ex.options.size());
  for (std::size_t oi = 0; oi < ex.options.size(); ++oi) {
    const auto opt = tokenize(ex.options[oi]);
    const std::size_t budget = max_len - 4;  // cls and three seps
    std::size_t q_keep = q.size(), o_keep = opt.size(), c_keep = ctx.size();
    if (c_keep + q_keep + o_keep > budget) {
      // Drop oldest context first, then the option tail, then the question
      // tail; the question never shrinks below one token.
      c_keep = q_keep + o_keep >= budget ? 0 : budget - q_keep - o_keep;
      if (c_keep == 0 && q_keep + o_keep > budget)
        o_keep = q_keep >= budget ? 0 : budget - q_keep;
      if (q_keep > budget) {
        if (budget < 1)
          throw EncodingError("max_len cannot hold cls, separators and a question token");
        q_keep = budget;
      }
    }

    EncodedInstance inst;
    inst.token_ids.reserve(max_len);
    inst.token_ids.push_back(Vocab::kCls);
    for (std::size_t i = ctx.size() - c_keep; i < ctx.size(); ++i)
      inst.token_ids.push_back(vocab.id(ctx[i]));
    inst.boundary = inst.token_ids.size();
    inst.token_ids.push_back(Vocab::kSep);
    for (std::size_t i = 0; i < q_keep; ++i) inst.token_ids.push_back(vocab.id(q[i]));
    inst.token_ids.push_back(Vocab::kSep);
    for (std::size_t i = 0; i < o_keep; ++i) inst.token_ids.push_back(vocab.id(opt[i]));
    inst.token_ids.push_back(Vocab::kSep);
    inst.real_len = inst.token_ids.size();
    inst.token_ids.resize(max_len, Vocab::kPad);
    inst.mask.assign(max_len, 0);
    std::fill(inst.mask.begin(), inst.mask.begin() + inst.real_len, 1);
    inst.gold = oi == ex.gold;
    inst.option_index = oi;
    inst.example_id = ex.example_id;
    instances.push_back(std::move(inst));
  }
  return instances;
}

std::vector<std::string> decode(const EncodedInstance& instance, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(instance.real_len);
  for (std::size_t i = 0; i < instance.real_len; ++i)
    out.push_back(vocab.token(instance.token_ids[i]));
  return out;
}

}  // namespace mrc
