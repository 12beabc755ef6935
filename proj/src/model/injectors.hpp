#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "model/params.hpp"
#include "numerics/ops.hpp"

namespace slimdt::model {

/// How the return-to-go sequence is fused into state representations.
///
/// Concat and AdaLN are point-to-point: the output at step t depends only on
/// the inputs at step t. The cross-attention kinds are sequence-to-sequence
/// and differ in which of Q, K, V are computed from the RTG embedding:
///
///   kind              Q     K     V
///   CrossAttnQtoKV    rtg   state state
///   CrossAttnKtoQV    state rtg   state
///   CrossAttnKVtoQ    state rtg   rtg     (conventional assignment)
///   CrossAttnQVtoK    rtg   state rtg
enum class InjectorKind {
  Concat,
  AdaLN,
  CrossAttnQtoKV,
  CrossAttnKtoQV,
  CrossAttnKVtoQ,
  CrossAttnQVtoK,
};

inline constexpr InjectorKind kAllInjectorKinds[] = {
    InjectorKind::Concat,         InjectorKind::AdaLN,
    InjectorKind::CrossAttnQtoKV, InjectorKind::CrossAttnKtoQV,
    InjectorKind::CrossAttnKVtoQ, InjectorKind::CrossAttnQVtoK,
};

std::string_view to_string(InjectorKind kind);
/// Throws ConfigError for unknown names.
InjectorKind parse_injector_kind(std::string_view name);
bool is_cross_attention(InjectorKind kind);

struct InjectorConfig {
  InjectorKind kind = InjectorKind::Concat;
  /// Cross-attention only: query t sees keys <= t.
  bool causal_mask = false;
  /// Concat only; 0 selects half the embedding dimension.
  std::size_t rtg_embed_dim = 0;
  /// Cross-attention only: adds the state input back onto the output.
  bool residual = false;
  double dropout = 0.0;

  std::size_t resolved_rtg_dim(std::size_t embed_dim) const {
    return rtg_embed_dim ? rtg_embed_dim : embed_dim / 2;
  }
  void validate(std::size_t embed_dim) const;
};

/// Multiply-add counts of one injector application over k steps.
struct InjectorFlops {
  std::uint64_t pointwise = 0;  // embeddings and projections, linear in k
  std::uint64_t score = 0;      // Q K^T, quadratic in k
  std::uint64_t mix = 0;        // softmax(.) V, quadratic in k
  std::uint64_t softmax_elements = 0;
  std::uint64_t layernorm_elements = 0;
  std::uint64_t total() const { return pointwise + score + mix; }
};

/// Analytic cost for batch size 1. `input_dim` is the width of the state
/// representation the injector receives.
InjectorFlops injector_flops(const InjectorConfig& cfg, std::size_t k,
                             std::size_t input_dim, std::size_t embed_dim);

/// A condition injector with its own parameters, registered in a ParamStore
/// under `prefix`.
class Injector {
 public:
  Injector(const InjectorConfig& cfg, std::size_t input_dim, std::size_t embed_dim,
           ParamStore& store, const std::string& prefix);

  /// rtg: [B x k x 1]; x: [B x k x input_dim]; valid: B*k step flags used to
  /// mask padded keys. Returns [B x k x embed_dim].
  nn::Tensor forward(const nn::Tensor& rtg, const nn::Tensor& x, const nn::Mask& valid,
                     bool training, nn::DropoutRng& rng) const;

  const InjectorConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return input_dim_; }

 private:
  nn::Tensor forward_concat(const nn::Tensor& rtg, const nn::Tensor& x) const;
  nn::Tensor forward_adaln(const nn::Tensor& rtg, const nn::Tensor& x) const;
  nn::Tensor forward_cross(const nn::Tensor& rtg, const nn::Tensor& x, const nn::Mask& valid,
                           bool training, nn::DropoutRng& rng) const;

  InjectorConfig cfg_;
  std::size_t input_dim_;
  std::size_t embed_dim_;
  nn::Tensor rtg_w_, rtg_b_;      // E_R
  nn::Tensor fuse_w_, fuse_b_;    // Concat: E_s'
  nn::Tensor mod_w_, mod_b_;      // AdaLN: (gamma, beta) = mod(E_R(R))
  nn::Tensor q_w_, q_b_, k_w_, k_b_, v_w_, v_b_, o_w_, o_b_;
};

}  // namespace slimdt::model
