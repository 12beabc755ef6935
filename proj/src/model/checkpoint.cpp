#include <algorithm>

#include <json.hpp>

#include "data/binary_io.hpp"
#include "errors.hpp"
#include "model/model.hpp"

namespace slimdt::model {

using json = nlohmann::ordered_json;

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["context_k"] = cfg.context_k;
  j["embed_dim"] = cfg.embed_dim;
  j["dropout"] = cfg.dropout;
  j["activation"] = cfg.activation;
  j["state_dim"] = cfg.state_dim;
  j["action_dim"] = cfg.action_dim;
  j["max_timestep"] = cfg.max_timestep;
  j["variant"] = to_string(cfg.variant);
  j["injector"] = {
      {"kind", to_string(cfg.injector.kind)},
      {"causal_mask", cfg.injector.causal_mask},
      {"rtg_embed_dim", cfg.injector.rtg_embed_dim},
      {"residual", cfg.injector.residual},
      {"dropout", cfg.injector.dropout},
  };
  j["post_injector_after_final_ln"] = cfg.post_injector_after_final_ln;
  j["tanh_head"] = cfg.tanh_head;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.context_k = j.at("context_k").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.activation = j.at("activation").get<std::string>();
    cfg.state_dim = j.at("state_dim").get<std::size_t>();
    cfg.action_dim = j.at("action_dim").get<std::size_t>();
    cfg.max_timestep = j.at("max_timestep").get<std::size_t>();
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    const json& inj = j.at("injector");
    cfg.injector.kind = parse_injector_kind(inj.at("kind").get<std::string>());
    cfg.injector.causal_mask = inj.at("causal_mask").get<bool>();
    cfg.injector.rtg_embed_dim = inj.at("rtg_embed_dim").get<std::size_t>();
    cfg.injector.residual = inj.at("residual").get<bool>();
    cfg.injector.dropout = inj.at("dropout").get<double>();
    cfg.post_injector_after_final_ln = j.at("post_injector_after_final_ln").get<bool>();
    cfg.tanh_head = j.at("tanh_head").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what(), "model");
  }
  return cfg;
}

// Layout (little-endian):
//   "SDTC" | u32 version | str model_config_json | str run_config_echo
//   | u64 d_s | f64 state_mean[d_s] | f64 state_std[d_s] | f64 rtg_scale
//   | u64 n_params | n_params x (str name | u32 rank | u64 dims[rank] | f64 data[])
// where str = u64 byte length followed by the bytes.
void save_checkpoint(const std::filesystem::path& path, const DecisionModel& model,
                     const data::DatasetStats& stats, const std::string& run_config_echo) {
  data::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(model_config_to_json(model.config()));
  w.str(run_config_echo);
  w.u64(stats.state_mean.size());
  w.f64s(stats.state_mean);
  w.f64s(stats.state_std);
  w.f64(stats.rtg_scale);
  const auto& entries = model.params().entries();
  w.u64(entries.size());
  for (const auto& p : entries) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u64(d);
    for (double v : p.value.data()) w.f64(v);
  }
  data::write_file(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  data::ByteReader r(data::read_file(path));
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError("bad magic (expected SDTC)", 0);
  }
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  Checkpoint ckpt;
  const std::uint64_t config_at = r.offset();
  const std::string config_text = r.str("model config");
  try {
    ckpt.config = model_config_from_json(config_text);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), config_at);
  }
  ckpt.run_config_echo = r.str("run config echo");
  const std::uint64_t ds = r.u64("stats dimension");
  ckpt.stats.state_mean = r.f64s(ds, "state mean");
  ckpt.stats.state_std = r.f64s(ds, "state std");
  ckpt.stats.rtg_scale = r.f64("rtg scale");
  const std::uint64_t n = r.u64("parameter count");
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedParam p;
    p.name = r.str("parameter name");
    const std::uint64_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("parameter rank");
    if (rank > 8) throw FormatError("implausible parameter rank", rank_at);
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.u64("parameter dims");
    std::uint64_t count = 1;
    for (auto d : shape) {
      if (d != 0 && count > r.remaining() / d) throw FormatError("truncated parameter", rank_at);
      count *= d;
    }
    p.value = nn::Tensor::from(shape, r.f64s(count, "parameter data"), true);
    ckpt.params.push_back(std::move(p));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after parameters", r.offset());
  return ckpt;
}

std::unique_ptr<DecisionModel> restore_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<DecisionModel>(ckpt.config, 0);
  auto& entries = model->params().entries();
  if (entries.size() != ckpt.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) +
                          " parameters, model expects " + std::to_string(entries.size()),
                      0);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = ckpt.params[i];
    auto& dst = entries[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw FormatError("parameter mismatch: checkpoint " + src.name +
                            nn::shape_str(src.value.shape()) + " vs model " + dst.name +
                            nn::shape_str(dst.value.shape()),
                        0);
    }
    std::copy(src.value.data().begin(), src.value.data().end(),
              dst.value.mutable_data().begin());
  }
  return model;
}

}  // namespace slimdt::model
