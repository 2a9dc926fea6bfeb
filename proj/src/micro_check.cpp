#include "mrc/micro_check.hpp"

#include <chrono>

#include "mrc/model.hpp"

namespace mrc {

namespace {

EncodedInstance fixture_instance(Rng& rng, const ModelConfig& cfg, bool gold) {
  EncodedInstance inst;
  inst.token_ids.push_back(Vocab::kCls);
  const std::size_t ctx_tokens = 3 + rng.below(3);
  for (std::size_t i = 0; i < ctx_tokens; ++i)
    inst.token_ids.push_back(4 + static_cast<int>(rng.below(cfg.vocab_size - 4)));
  inst.boundary = inst.token_ids.size();
  inst.token_ids.push_back(Vocab::kSep);
  const std::size_t qa_tokens = 2 + rng.below(2);
  for (std::size_t i = 0; i < qa_tokens; ++i)
    inst.token_ids.push_back(4 + static_cast<int>(rng.below(cfg.vocab_size - 4)));
  inst.token_ids.push_back(Vocab::kSep);
  inst.real_len = inst.token_ids.size();
  inst.token_ids.resize(cfg.max_len, Vocab::kPad);
  inst.mask.assign(cfg.max_len, 0);
  std::fill(inst.mask.begin(), inst.mask.begin() + inst.real_len, 1);
  inst.gold = gold;
  inst.example_id = "microcheck";
  return inst;
}

}  // namespace

MicroCheckResult micro_grad_check(std::uint64_t seed, double eps) {
  const auto start = std::chrono::steady_clock::now();
  auto cfg = ModelConfig::micro(seed);
  auto params = init_model<double>(cfg);
  Rng rng = Rng::stream(seed, 3);
  std::vector<EncodedInstance> options;
  for (int i = 0; i < 3; ++i) options.push_back(fixture_instance(rng, cfg, i == 0));

  auto named = params.named();
  std::vector<Tensor<double>> tensors;
  tensors.reserve(named.size());
  for (auto& np : named) tensors.push_back(np.tensor);

  auto report = grad_check<double>(
      [&](Tape<double>& tp) {
        return cross_entropy(tp, question_logits(tp, params, cfg, options), 0);
      },
      tensors, eps);

  MicroCheckResult result;
  result.max_rel_err = report.max_rel_err;
  result.scalars_checked = report.scalars_checked;
  result.worst_param = named[report.worst_param].name;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace mrc
