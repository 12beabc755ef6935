#include "model/injectors.hpp"

#include <algorithm>

#include "errors.hpp"
#include "model/attention.hpp"

namespace slimdt::model {

namespace {

constexpr double kInitStd = 0.02;

struct Sources {
  bool q_from_rtg, k_from_rtg, v_from_rtg;
};

Sources sources(InjectorKind kind) {
  switch (kind) {
    case InjectorKind::CrossAttnQtoKV: return {true, false, false};
    case InjectorKind::CrossAttnKtoQV: return {false, true, false};
    case InjectorKind::CrossAttnKVtoQ: return {false, true, true};
    case InjectorKind::CrossAttnQVtoK: return {true, false, true};
    default: break;
  }
  throw ConfigError("not a cross-attention injector: " + std::string(to_string(kind)),
                    "injector.kind");
}

}  // namespace

std::string_view to_string(InjectorKind kind) {
  switch (kind) {
    case InjectorKind::Concat: return "concat";
    case InjectorKind::AdaLN: return "adaln";
    case InjectorKind::CrossAttnQtoKV: return "cross_q_to_kv";
    case InjectorKind::CrossAttnKtoQV: return "cross_k_to_qv";
    case InjectorKind::CrossAttnKVtoQ: return "cross_kv_to_q";
    case InjectorKind::CrossAttnQVtoK: return "cross_qv_to_k";
  }
  return "unknown";
}

InjectorKind parse_injector_kind(std::string_view name) {
  for (InjectorKind k : kAllInjectorKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown injector kind '" + std::string(name) +
                        "' (expected concat, adaln, cross_q_to_kv, cross_k_to_qv, "
                        "cross_kv_to_q or cross_qv_to_k)",
                    "injector.kind");
}

bool is_cross_attention(InjectorKind kind) {
  return kind != InjectorKind::Concat && kind != InjectorKind::AdaLN;
}

void InjectorConfig::validate(std::size_t embed_dim) const {
  if (!is_cross_attention(kind) && causal_mask) {
    throw ConfigError("causal_mask applies to cross-attention injectors only",
                      "injector.causal_mask");
  }
  if (!is_cross_attention(kind) && residual) {
    throw ConfigError("residual applies to cross-attention injectors only",
                      "injector.residual");
  }
  if (kind == InjectorKind::Concat && resolved_rtg_dim(embed_dim) == 0) {
    throw ConfigError("rtg_embed_dim must be >= 1", "injector.rtg_embed_dim");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)", "injector.dropout");
  }
}

InjectorFlops injector_flops(const InjectorConfig& cfg, std::size_t k,
                             std::size_t input_dim, std::size_t embed_dim) {
  const std::uint64_t kk = k, d = input_dim, h = embed_dim;
  InjectorFlops f;
  switch (cfg.kind) {
    case InjectorKind::Concat: {
      const std::uint64_t r = cfg.resolved_rtg_dim(embed_dim);
      f.pointwise = kk * r + kk * (r + d) * h;
      break;
    }
    case InjectorKind::AdaLN:
      f.pointwise = kk * h + kk * h * 2 * h;
      f.layernorm_elements = kk * d;
      break;
    default: {
      const Sources s = sources(cfg.kind);
      const int from_state = !s.q_from_rtg + !s.k_from_rtg + !s.v_from_rtg;
      const int from_rtg = 3 - from_state;
      f.pointwise = kk * h                               // E_R
                    + kk * d * h * from_state            // state-side projections
                    + kk * h * h * from_rtg              // rtg-side projections
                    + kk * h * h;                        // output projection
      f.score = kk * kk * h;
      f.mix = kk * kk * h;
      f.softmax_elements = kk * kk;
      break;
    }
  }
  return f;
}

Injector::Injector(const InjectorConfig& cfg, std::size_t input_dim, std::size_t embed_dim,
                   ParamStore& store, const std::string& prefix)
    : cfg_(cfg), input_dim_(input_dim), embed_dim_(embed_dim) {
  cfg_.validate(embed_dim);
  const std::size_t h = embed_dim;
  switch (cfg_.kind) {
    case InjectorKind::Concat: {
      const std::size_t r = cfg_.resolved_rtg_dim(h);
      rtg_w_ = store.normal(prefix + "rtg_embed.weight", {1, r}, kInitStd);
      rtg_b_ = store.constant(prefix + "rtg_embed.bias", {r}, 0.0);
      fuse_w_ = store.normal(prefix + "fuse.weight", {r + input_dim, h}, kInitStd);
      fuse_b_ = store.constant(prefix + "fuse.bias", {h}, 0.0);
      break;
    }
    case InjectorKind::AdaLN: {
      if (input_dim != h) {
        throw ConfigError("adaln injector needs input width " + std::to_string(h) +
                              ", got " + std::to_string(input_dim),
                          "injector.kind");
      }
      rtg_w_ = store.normal(prefix + "rtg_embed.weight", {1, h}, kInitStd);
      rtg_b_ = store.constant(prefix + "rtg_embed.bias", {h}, 0.0);
      // Identity modulation at init: gamma = 1, beta = 0.
      mod_w_ = store.constant(prefix + "modulation.weight", {h, 2 * h}, 0.0);
      mod_b_ = store.constant(prefix + "modulation.bias", {2 * h}, 0.0);
      std::fill_n(mod_b_.mutable_data().begin(), h, 1.0);
      break;
    }
    default: {
      if (cfg_.residual && input_dim != h) {
        throw ConfigError("residual injector needs input width " + std::to_string(h),
                          "injector.residual");
      }
      const Sources s = sources(cfg_.kind);
      rtg_w_ = store.normal(prefix + "rtg_embed.weight", {1, h}, kInitStd);
      rtg_b_ = store.constant(prefix + "rtg_embed.bias", {h}, 0.0);
      q_w_ = store.normal(prefix + "query.weight", {s.q_from_rtg ? h : input_dim, h}, kInitStd);
      q_b_ = store.constant(prefix + "query.bias", {h}, 0.0);
      k_w_ = store.normal(prefix + "key.weight", {s.k_from_rtg ? h : input_dim, h}, kInitStd);
      k_b_ = store.constant(prefix + "key.bias", {h}, 0.0);
      v_w_ = store.normal(prefix + "value.weight", {s.v_from_rtg ? h : input_dim, h}, kInitStd);
      v_b_ = store.constant(prefix + "value.bias", {h}, 0.0);
      o_w_ = store.normal(prefix + "out.weight", {h, h}, kInitStd);
      o_b_ = store.constant(prefix + "out.bias", {h}, 0.0);
      break;
    }
  }
}

nn::Tensor Injector::forward(const nn::Tensor& rtg, const nn::Tensor& x, const nn::Mask& valid,
                             bool training, nn::DropoutRng& rng) const {
  if (rtg.rank() != 3 || rtg.dim(2) != 1 || x.rank() != 3 || x.dim(0) != rtg.dim(0) ||
      x.dim(1) != rtg.dim(1) || x.dim(2) != input_dim_) {
    throw DimensionError("injector: rtg " + nn::shape_str(rtg.shape()) + " and states " +
                         nn::shape_str(x.shape()) + " do not match input width " +
                         std::to_string(input_dim_));
  }
  nn::Tensor out;
  switch (cfg_.kind) {
    case InjectorKind::Concat: out = forward_concat(rtg, x); break;
    case InjectorKind::AdaLN: out = forward_adaln(rtg, x); break;
    default: out = forward_cross(rtg, x, valid, training, rng); break;
  }
  return nn::dropout(out, cfg_.dropout, training, rng);
}

nn::Tensor Injector::forward_concat(const nn::Tensor& rtg, const nn::Tensor& x) const {
  nn::FlopCounter::Category cat("injector");
  const nn::Tensor r = nn::linear(rtg, rtg_w_, rtg_b_);
  return nn::linear(nn::concat_last(r, x), fuse_w_, fuse_b_);
}

nn::Tensor Injector::forward_adaln(const nn::Tensor& rtg, const nn::Tensor& x) const {
  nn::FlopCounter::Category cat("injector");
  const std::size_t h = embed_dim_;
  const nn::Tensor z = nn::linear(rtg, rtg_w_, rtg_b_);
  const nn::Tensor mod = nn::linear(z, mod_w_, mod_b_);
  const nn::Tensor gamma = nn::slice_last(mod, 0, h);
  const nn::Tensor beta = nn::slice_last(mod, h, h);
  return nn::add(nn::mul(gamma, nn::layer_norm(x)), beta);
}

nn::Tensor Injector::forward_cross(const nn::Tensor& rtg, const nn::Tensor& x,
                                   const nn::Mask& valid, bool training,
                                   nn::DropoutRng& rng) const {
  const Sources s = sources(cfg_.kind);
  const std::size_t batch = x.dim(0), k = x.dim(1);
  nn::Tensor q, key, value, r;
  {
    nn::FlopCounter::Category cat("injector");
    r = nn::linear(rtg, rtg_w_, rtg_b_);
    q = nn::linear(s.q_from_rtg ? r : x, q_w_, q_b_);
    key = nn::linear(s.k_from_rtg ? r : x, k_w_, k_b_);
    value = nn::linear(s.v_from_rtg ? r : x, v_w_, v_b_);
  }
  const nn::Mask mask = attention_mask(batch, k, k, valid, cfg_.causal_mask);
  const nn::Tensor attended = scaled_dot_attention(q, key, value, mask, 1, 0.0, training, rng,
                                                   "injector_score", "injector_mix");
  nn::Tensor out;
  {
    nn::FlopCounter::Category cat("injector");
    out = nn::linear(attended, o_w_, o_b_);
  }
  if (cfg_.residual) out = nn::add(x, out);
  return out;
}

}  // namespace slimdt::model
