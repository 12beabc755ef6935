#include "model/model.hpp"

#include "errors.hpp"
#include "model/attention.hpp"

namespace slimdt::model {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::DT: return "dt";
    case Variant::SlimPre: return "slim_pre";
    case Variant::SlimPost: return "slim_post";
    case Variant::SlimPrePost: return "slim_pre_post";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                        "' (expected dt, slim_pre, slim_post or slim_pre_post)",
                    "model.variant");
}

void ModelConfig::validate() const {
  if (context_k == 0) throw ConfigError("must be >= 1", "model.context_k");
  if (embed_dim == 0) throw ConfigError("must be >= 1", "model.embed_dim");
  if (n_heads == 0 || embed_dim % n_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                          " is not divisible by n_heads " + std::to_string(n_heads),
                      "model.n_heads");
  }
  if (state_dim == 0) throw ConfigError("must be >= 1", "model.state_dim");
  if (action_dim == 0) throw ConfigError("must be >= 1", "model.action_dim");
  if (max_timestep == 0) throw ConfigError("must be >= 1", "model.max_timestep");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("must lie in [0, 1)", "model.dropout");
  if (activation != "relu") {
    throw ConfigError("only 'relu' is supported, got '" + activation + "'", "model.activation");
  }
  if (variant != Variant::DT) injector.validate(embed_dim);
}

// ---------------------------------------------------------------------------
// assembly

AssembledSequence interleave_tokens(const Embeddings& e, const data::WindowBatch& batch) {
  std::vector<nn::Tensor> parts;
  if (e.rtg.defined()) parts.push_back(e.rtg);
  parts.push_back(e.state);
  parts.push_back(e.action);
  const std::size_t per_step = parts.size();
  const std::size_t b = batch.batch, k = batch.k, len = per_step * k;
  AssembledSequence seq;
  seq.tokens = nn::interleave_steps(parts);
  seq.length = len;
  seq.token_mask.assign(b * len, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const bool valid = batch.pad_mask[i * k + t] != 0;
      for (std::size_t q = 0; q < per_step; ++q) {
        const bool is_action = q == per_step - 1;
        const bool keep = valid && (!is_action || batch.action_mask[i * k + t] != 0);
        seq.token_mask[i * len + t * per_step + q] = keep ? 1 : 0;
      }
    }
  }
  const std::size_t state_slot = per_step == 3 ? 1 : 0;
  for (std::size_t t = 0; t < k; ++t) {
    seq.action_read_positions.push_back(t * per_step + state_slot);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// DecisionModel

DecisionModel::DecisionModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), params_(seed) {
  cfg_.validate();
  const std::size_t h = cfg_.embed_dim;
  const bool concat_pre =
      has_pre_injector(cfg_.variant) && cfg_.injector.kind == InjectorKind::Concat;
  if (cfg_.variant == Variant::DT) {
    rtg_w_ = params_.normal("embed.rtg.weight", {1, h}, kInitStd);
    rtg_b_ = params_.constant("embed.rtg.bias", {h}, 0.0);
  }
  if (!concat_pre) {
    state_w_ = params_.normal("embed.state.weight", {cfg_.state_dim, h}, kInitStd);
    state_b_ = params_.constant("embed.state.bias", {h}, 0.0);
  }
  action_w_ = params_.normal("embed.action.weight", {cfg_.action_dim, h}, kInitStd);
  action_b_ = params_.constant("embed.action.bias", {h}, 0.0);
  time_table_ = params_.normal("embed.timestep", {cfg_.max_timestep, h}, kInitStd);

  if (has_pre_injector(cfg_.variant)) {
    pre_injector_ = std::make_unique<Injector>(cfg_.injector, concat_pre ? cfg_.state_dim : h,
                                               h, params_, "injector_pre.");
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1_g = params_.constant(p + "ln1.gain", {h}, 1.0);
    b.ln1_b = params_.constant(p + "ln1.bias", {h}, 0.0);
    b.q_w = params_.normal(p + "attn.query.weight", {h, h}, kInitStd);
    b.q_b = params_.constant(p + "attn.query.bias", {h}, 0.0);
    b.k_w = params_.normal(p + "attn.key.weight", {h, h}, kInitStd);
    b.k_b = params_.constant(p + "attn.key.bias", {h}, 0.0);
    b.v_w = params_.normal(p + "attn.value.weight", {h, h}, kInitStd);
    b.v_b = params_.constant(p + "attn.value.bias", {h}, 0.0);
    b.o_w = params_.normal(p + "attn.out.weight", {h, h}, kInitStd);
    b.o_b = params_.constant(p + "attn.out.bias", {h}, 0.0);
    b.ln2_g = params_.constant(p + "ln2.gain", {h}, 1.0);
    b.ln2_b = params_.constant(p + "ln2.bias", {h}, 0.0);
    b.fc_w = params_.normal(p + "mlp.fc.weight", {h, 4 * h}, kInitStd);
    b.fc_b = params_.constant(p + "mlp.fc.bias", {4 * h}, 0.0);
    b.proj_w = params_.normal(p + "mlp.proj.weight", {4 * h, h}, kInitStd);
    b.proj_b = params_.constant(p + "mlp.proj.bias", {h}, 0.0);
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = params_.constant("ln_final.gain", {h}, 1.0);
  lnf_b_ = params_.constant("ln_final.bias", {h}, 0.0);
  if (has_post_injector(cfg_.variant)) {
    post_injector_ = std::make_unique<Injector>(cfg_.injector, h, h, params_, "injector_post.");
  }
  head_w_ = params_.normal("head.weight", {h, cfg_.action_dim}, kInitStd);
  head_b_ = params_.constant("head.bias", {cfg_.action_dim}, 0.0);
}

void DecisionModel::check_batch(const data::WindowBatch& batch) const {
  const std::size_t b = batch.batch, k = batch.k;
  const auto expect = [&](const nn::Tensor& t, std::size_t last, const char* name) {
    if (!t.defined() || t.shape() != nn::Shape{b, k, last}) {
      throw ConfigError(std::string("batch ") + name + " has shape " +
                            (t.defined() ? nn::shape_str(t.shape()) : "<undefined>") +
                            ", expected " + nn::shape_str({b, k, last}),
                        "model");
    }
  };
  expect(batch.rtg, 1, "rtg");
  expect(batch.states, cfg_.state_dim, "states");
  expect(batch.actions, cfg_.action_dim, "actions");
  if (batch.timesteps.size() != b * k || batch.pad_mask.size() != b * k ||
      batch.action_mask.size() != b * k) {
    throw ConfigError("batch index arrays do not have B*k entries", "model");
  }
  if (k > cfg_.context_k) {
    throw ConfigError("window length " + std::to_string(k) + " exceeds context_k " +
                          std::to_string(cfg_.context_k),
                      "model.context_k");
  }
  for (std::int64_t t : batch.timesteps) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.max_timestep) {
      throw ConfigError("timestep " + std::to_string(t) + " outside embedding table of " +
                            std::to_string(cfg_.max_timestep),
                        "model.max_timestep");
    }
  }
}

nn::Tensor DecisionModel::timestep_embedding(const data::WindowBatch& batch) const {
  return nn::embedding_lookup(time_table_, batch.timesteps, {batch.batch, batch.k});
}

Embeddings DecisionModel::embed_tokens(const data::WindowBatch& batch, bool training,
                                       nn::DropoutRng& rng) const {
  check_batch(batch);
  const nn::Tensor time = timestep_embedding(batch);
  Embeddings e;
  nn::Tensor state_repr;
  {
    nn::FlopCounter::Category cat("embed");
    if (rtg_w_.defined()) e.rtg = nn::add(nn::linear(batch.rtg, rtg_w_, rtg_b_), time);
    if (state_w_.defined()) state_repr = nn::linear(batch.states, state_w_, state_b_);
    e.action = nn::add(nn::linear(batch.actions, action_w_, action_b_), time);
  }
  if (pre_injector_) {
    const nn::Tensor& input = state_w_.defined() ? state_repr : batch.states;
    state_repr = pre_injector_->forward(batch.rtg, input, batch.pad_mask, training, rng);
  }
  e.state = nn::add(state_repr, time);
  return e;
}

AssembledSequence DecisionModel::assemble(const data::WindowBatch& batch, bool training,
                                          nn::DropoutRng& rng) const {
  AssembledSequence seq = interleave_tokens(embed_tokens(batch, training, rng), batch);
  seq.tokens = nn::dropout(seq.tokens, cfg_.dropout, training, rng);
  return seq;
}

nn::Tensor DecisionModel::block_forward(const Block& blk, const nn::Tensor& x,
                                        const nn::Mask& mask, bool training,
                                        nn::DropoutRng& rng) const {
  const nn::Tensor a = nn::row_affine(nn::layer_norm(x, kLayerNormEps), blk.ln1_g, blk.ln1_b);
  nn::Tensor q, k, v;
  {
    nn::FlopCounter::Category cat("attn_proj");
    q = nn::linear(a, blk.q_w, blk.q_b);
    k = nn::linear(a, blk.k_w, blk.k_b);
    v = nn::linear(a, blk.v_w, blk.v_b);
  }
  const nn::Tensor att = scaled_dot_attention(q, k, v, mask, cfg_.n_heads, cfg_.dropout,
                                              training, rng, "attn_score", "attn_mix");
  nn::Tensor o;
  {
    nn::FlopCounter::Category cat("attn_proj");
    o = nn::linear(att, blk.o_w, blk.o_b);
  }
  const nn::Tensor x1 = nn::add(x, nn::dropout(o, cfg_.dropout, training, rng));
  const nn::Tensor m = nn::row_affine(nn::layer_norm(x1, kLayerNormEps), blk.ln2_g, blk.ln2_b);
  nn::Tensor f;
  {
    nn::FlopCounter::Category cat("mlp");
    f = nn::linear(nn::relu(nn::linear(m, blk.fc_w, blk.fc_b)), blk.proj_w, blk.proj_b);
  }
  return nn::add(x1, nn::dropout(f, cfg_.dropout, training, rng));
}

nn::Tensor DecisionModel::decoder_forward(const AssembledSequence& seq, bool training,
                                          nn::DropoutRng& rng, bool apply_final_ln) const {
  const std::size_t b = seq.tokens.dim(0), len = seq.tokens.dim(1);
  if (len > 3 * cfg_.context_k) {
    throw ContractError("decoder_forward: sequence length " + std::to_string(len) +
                        " exceeds 3 * context_k");
  }
  const nn::Mask mask = attention_mask(b, len, len, seq.token_mask, /*causal=*/true);
  nn::Tensor x = seq.tokens;
  for (const Block& blk : blocks_) x = block_forward(blk, x, mask, training, rng);
  if (!apply_final_ln) return x;
  return nn::row_affine(nn::layer_norm(x, kLayerNormEps), lnf_g_, lnf_b_);
}

nn::Tensor DecisionModel::action_head(const nn::Tensor& hidden) const {
  nn::FlopCounter::Category cat("head");
  nn::Tensor out = nn::linear(hidden, head_w_, head_b_);
  return cfg_.tanh_head ? nn::tanh(out) : out;
}

nn::Tensor DecisionModel::forward(const data::WindowBatch& batch, bool training,
                                  nn::DropoutRng& rng) const {
  const AssembledSequence seq = assemble(batch, training, rng);
  const bool final_ln = !post_injector_ || cfg_.post_injector_after_final_ln;
  const nn::Tensor hidden = decoder_forward(seq, training, rng, final_ln);
  nn::Tensor at_states = nn::select_positions(hidden, seq.action_read_positions);
  if (post_injector_) {
    at_states = post_injector_->forward(batch.rtg, at_states, batch.pad_mask, training, rng);
  }
  return action_head(at_states);
}

nn::Tensor DecisionModel::forward(const data::WindowBatch& batch) const {
  nn::DropoutRng rng(0);
  return forward(batch, /*training=*/false, rng);
}

// ---------------------------------------------------------------------------
// analytic FLOPs

FlopReport model_flops(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t k = cfg.context_k, h = cfg.embed_dim, ds = cfg.state_dim,
                      da = cfg.action_dim, layers = cfg.n_layers, heads = cfg.n_heads;
  const std::uint64_t len = cfg.sequence_length();
  FlopReport r;
  r.sequence_length = len;
  const bool concat_pre =
      has_pre_injector(cfg.variant) && cfg.injector.kind == InjectorKind::Concat;
  if (cfg.variant == Variant::DT) r.embed += k * h;
  if (!concat_pre) r.embed += k * ds * h;
  r.embed += k * da * h;

  const auto add_injector = [&](std::size_t input_dim) {
    const InjectorFlops f = injector_flops(cfg.injector, k, input_dim, h);
    r.injector += f.total();
    r.injector_score += f.score;
    r.injector_mix += f.mix;
    r.softmax_elements += f.softmax_elements;
    r.layernorm_elements += f.layernorm_elements;
  };
  if (has_pre_injector(cfg.variant)) add_injector(concat_pre ? ds : h);
  if (has_post_injector(cfg.variant)) add_injector(h);

  r.attn_proj = layers * 4 * len * h * h;
  r.attn_score = layers * len * len * h;
  r.attn_mix = layers * len * len * h;
  r.mlp = layers * 8 * len * h * h;
  r.softmax_elements += layers * heads * len * len;
  r.layernorm_elements += layers * 2 * len * h;
  const bool final_ln = !has_post_injector(cfg.variant) || cfg.post_injector_after_final_ln;
  if (final_ln) r.layernorm_elements += len * h;
  r.head = k * h * da;
  return r;
}

}  // namespace slimdt::model
