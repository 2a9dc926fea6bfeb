#include "mrc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mrc/config_json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as native little-endian floats");

namespace mrc {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json model_config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["vocab_size"] = cfg.vocab_size;
  j["hidden"] = cfg.hidden;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["duma_heads"] = cfg.duma_heads;
  j["duma_head_dim"] = cfg.duma_head_dim;
  j["max_len"] = cfg.max_len;
  j["ff_width"] = cfg.ff_width;
  j["share_layers"] = cfg.share_layers;
  j["share_duma_directions"] = cfg.share_duma_directions;
  j["duma_depth"] = cfg.duma_depth;
  j["dropout"] = cfg.dropout;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.layers = j.value("layers", cfg.layers);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.duma_heads = j.value("duma_heads", cfg.duma_heads);
  cfg.duma_head_dim = j.value("duma_head_dim", cfg.duma_head_dim);
  cfg.max_len = j.value("max_len", cfg.max_len);
  cfg.ff_width = j.value("ff_width", cfg.ff_width);
  cfg.share_layers = j.value("share_layers", cfg.share_layers);
  cfg.share_duma_directions = j.value("share_duma_directions", cfg.share_duma_directions);
  cfg.duma_depth = j.value("duma_depth", cfg.duma_depth);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

ordered_json task_spec_to_json(const TaskSpec& spec) {
  ordered_json j;
  j["name"] = spec.name;
  j["kind"] = task_name(spec.kind);
  j["train"] = spec.train_path;
  j["dev"] = spec.dev_path;
  if (spec.kind == Task::kSynthetic) {
    j["synthetic_train"] = spec.synthetic_train;
    j["synthetic_dev"] = spec.synthetic_dev;
    j["synthetic_options"] = spec.synthetic_options;
    j["synthetic_vocab"] = spec.synthetic_vocab;
    j["synthetic_seed"] = spec.synthetic_seed;
  }
  return j;
}

TaskSpec task_spec_from_json(const json& j) {
  TaskSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.kind = task_from_name(j.value("kind", spec.name));
  spec.train_path = j.value("train", std::string{});
  spec.dev_path = j.value("dev", std::string{});
  spec.synthetic_train = j.value("synthetic_train", spec.synthetic_train);
  spec.synthetic_dev = j.value("synthetic_dev", spec.synthetic_dev);
  spec.synthetic_options = j.value("synthetic_options", spec.synthetic_options);
  spec.synthetic_vocab = j.value("synthetic_vocab", spec.synthetic_vocab);
  spec.synthetic_seed = j.value("synthetic_seed", spec.synthetic_seed);
  return spec;
}

ordered_json train_config_to_json(const TrainConfig& cfg) {
  ordered_json j;
  j["batch_size"] = cfg.batch_size;
  j["peak_lr"] = cfg.peak_lr;
  j["weight_decay"] = cfg.weight_decay;
  j["clip_norm"] = cfg.clip_norm;
  j["epochs"] = cfg.epochs;
  j["warmup_fraction"] = cfg.warmup_fraction;
  j["eval_every"] = cfg.eval_every;
  j["seed"] = cfg.seed;
  ordered_json tasks = ordered_json::array();
  for (const auto& t : cfg.tasks) tasks.push_back(task_spec_to_json(t));
  j["tasks"] = std::move(tasks);
  return j;
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  TrainConfig cfg = base;
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.warmup_fraction = j.value("warmup_fraction", cfg.warmup_fraction);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("tasks")) {
    cfg.tasks.clear();
    for (const auto& t : j["tasks"]) cfg.tasks.push_back(task_spec_from_json(t));
  }
  return cfg;
}

namespace {

constexpr char kMagic[4] = {'M', 'R', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint " + path.string() + " is truncated");
  return v;
}

void write_tensor(std::ofstream& out, const std::string& name,
                  const Tensor<float>& t) {
  write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) write_raw<std::uint64_t>(out, e);
  out.write(reinterpret_cast<const char*>(t.value().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

struct RawTensor {
  Shape shape;
  std::vector<float> data;
};

std::pair<std::string, RawTensor> read_tensor(std::ifstream& in,
                                              const std::filesystem::path& path) {
  const auto name_len = read_raw<std::uint16_t>(in, path);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  const auto rank = read_raw<std::uint8_t>(in, path);
  RawTensor raw;
  std::size_t numel = 1;
  for (std::uint8_t r = 0; r < rank; ++r) {
    raw.shape.push_back(static_cast<std::size_t>(read_raw<std::uint64_t>(in, path)));
    numel *= raw.shape.back();
  }
  raw.data.resize(numel);
  in.read(reinterpret_cast<char*>(raw.data.data()),
          static_cast<std::streamsize>(numel * sizeof(float)));
  if (!in) throw DataError("checkpoint " + path.string() + " is truncated");
  return {std::move(name), std::move(raw)};
}

void fill_from_raw(const std::map<std::string, RawTensor>& blobs,
                   const std::string& name, Tensor<float> dst,
                   const std::filesystem::path& path) {
  auto it = blobs.find(name);
  if (it == blobs.end())
    throw DataError("checkpoint " + path.string() + " is missing tensor " + name);
  if (it->second.shape != dst.shape())
    throw DataError("checkpoint " + path.string() + ": tensor " + name +
                    " has shape " + shape_str(it->second.shape) + ", expected " +
                    shape_str(dst.shape()));
  std::copy(it->second.data.begin(), it->second.data.end(), dst.value().begin());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const ModelParams<float>& params, const AdamwState* opt) {
  ordered_json header;
  header["format_version"] = meta.format_version;
  header["model"] = model_config_to_json(meta.model);
  header["train"] = train_config_to_json(meta.train);
  header["step"] = meta.step;
  header["dev_accuracy"] = meta.dev_accuracy;
  header["best_step"] = meta.best_step;
  header["sampler_rng_state"] = meta.sampler_rng_state;
  const std::string header_bytes = header.dump();

  auto named = params.named();
  std::uint32_t count = static_cast<std::uint32_t>(named.size());
  if (opt) count += 2 * static_cast<std::uint32_t>(named.size());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    write_raw<std::uint32_t>(out, kFormatVersion);
    write_raw<std::uint64_t>(out, header_bytes.size());
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
    write_raw<std::uint32_t>(out, count);
    for (const auto& p : named) write_tensor(out, p.name, p.tensor);
    if (opt) {
      if (opt->m.size() != named.size() || opt->v.size() != named.size())
        throw ConfigError("save_checkpoint: moments do not match the parameter list");
      for (std::size_t i = 0; i < named.size(); ++i)
        write_tensor(out, "adam.m." + named[i].name, opt->m[i]);
      for (std::size_t i = 0; i < named.size(); ++i)
        write_tensor(out, "adam.v." + named[i].name, opt->v[i]);
    }
    if (!out) throw IoError("short write while saving checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("file " + path.string() + " is not a checkpoint");
  const auto version = read_raw<std::uint32_t>(in, path);
  if (version != kFormatVersion)
    throw DataError("checkpoint " + path.string() + " has format version " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kFormatVersion));
  const auto header_len = read_raw<std::uint64_t>(in, path);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint " + path.string() + " is truncated");
  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + " header is corrupt: " + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.meta.format_version = header.value("format_version", 1);
  loaded.meta.model = model_config_from_json(header.at("model"));
  loaded.meta.train = train_config_from_json(header.at("train"));
  loaded.meta.step = header.value("step", std::size_t{0});
  loaded.meta.dev_accuracy = header.value("dev_accuracy", -1.0);
  loaded.meta.best_step = header.value("best_step", std::size_t{0});
  loaded.meta.sampler_rng_state = header.value("sampler_rng_state", std::uint64_t{0});

  const auto count = read_raw<std::uint32_t>(in, path);
  std::map<std::string, RawTensor> blobs;
  for (std::uint32_t i = 0; i < count; ++i) blobs.insert(read_tensor(in, path));

  loaded.params = init_model<float>(loaded.meta.model);
  auto named = loaded.params.named();
  for (const auto& p : named) fill_from_raw(blobs, p.name, p.tensor, path);

  loaded.has_opt = blobs.contains("adam.m." + named.front().name);
  if (loaded.has_opt) {
    loaded.opt = AdamwState::init(named);
    for (std::size_t i = 0; i < named.size(); ++i) {
      fill_from_raw(blobs, "adam.m." + named[i].name, loaded.opt.m[i], path);
      fill_from_raw(blobs, "adam.v." + named[i].name, loaded.opt.v[i], path);
    }
  }
  return loaded;
}

}  // namespace mrc
