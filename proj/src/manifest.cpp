#include "mrc/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mrc/config_json.hpp"

namespace mrc {

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

std::uint64_t fnv1a_str(const std::string& s, std::uint64_t seed) {
  return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, seed);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t hash_file_raw(const std::filesystem::path& path, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file " + path.string());
  std::uint64_t h = seed;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a({reinterpret_cast<const unsigned char*>(buf),
               static_cast<std::size_t>(in.gcount())},
              h);
    if (!in) break;
  }
  return h;
}

}  // namespace

std::string hash_file(const std::filesystem::path& path) {
  return hex64(hash_file_raw(path, 0xCBF29CE484222325ULL));
}

std::string hash_tree(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(path))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& f : files) {
    h = fnv1a_str(f.lexically_relative(path).generic_string(), h);
    h = hash_file_raw(f, h);
  }
  return hex64(h);
}

std::string hash_examples(std::span<const McExample> examples) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& ex : examples) {
    h = fnv1a_str(ex.example_id, h);
    for (const auto& c : ex.context) h = fnv1a_str(c, h);
    h = fnv1a_str(ex.question, h);
    for (const auto& o : ex.options) h = fnv1a_str(o, h);
    h = fnv1a_str(std::to_string(ex.gold), h);
  }
  return hex64(h);
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  nlohmann::ordered_json j;
  j["model"] = model_config_to_json(manifest.model);
  j["train"] = train_config_to_json(manifest.train);
  nlohmann::ordered_json datasets = nlohmann::ordered_json::array();
  for (const auto& d : manifest.datasets) {
    nlohmann::ordered_json e;
    e["task"] = d.task;
    e["split"] = d.split;
    e["path"] = d.path;
    e["items"] = d.items;
    e["content_hash"] = d.content_hash;
    datasets.push_back(std::move(e));
  }
  j["datasets"] = std::move(datasets);
  nlohmann::ordered_json artifacts;
  artifacts["out_dir"] = manifest.out_dir;
  artifacts["vocab"] = manifest.vocab_path;
  artifacts["metrics"] = manifest.metrics_path;
  artifacts["checkpoint"] = manifest.checkpoint_path;
  j["artifacts"] = std::move(artifacts);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  RunManifest m;
  m.model = model_config_from_json(j.at("model"));
  m.train = train_config_from_json(j.at("train"));
  for (const auto& e : j.value("datasets", nlohmann::json::array())) {
    DatasetFingerprint d;
    d.task = e.value("task", std::string{});
    d.split = e.value("split", std::string{});
    d.path = e.value("path", std::string{});
    d.items = e.value("items", std::size_t{0});
    d.content_hash = e.value("content_hash", std::string{});
    m.datasets.push_back(std::move(d));
  }
  if (j.contains("artifacts")) {
    const auto& a = j["artifacts"];
    m.out_dir = a.value("out_dir", std::string{});
    m.vocab_path = a.value("vocab", std::string{});
    m.metrics_path = a.value("metrics", std::string{});
    m.checkpoint_path = a.value("checkpoint", std::string{});
  }
  return m;
}

}  // namespace mrc
