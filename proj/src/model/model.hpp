#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "data/trajectory.hpp"
#include "model/injectors.hpp"
#include "model/params.hpp"
#include "numerics/ops.hpp"

namespace slimdt::model {

/// Sequence layout.
///   DT          (R', s', a') per step, L = 3k
///   SlimPre     injector before the decoder, (s', a') per step, L = 2k
///   SlimPost    injector after the decoder at the state slots, L = 2k
///   SlimPrePost both, with separate injector parameters
enum class Variant { DT, SlimPre, SlimPost, SlimPrePost };

inline constexpr Variant kAllVariants[] = {Variant::DT, Variant::SlimPre, Variant::SlimPost,
                                           Variant::SlimPrePost};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

inline bool has_pre_injector(Variant v) {
  return v == Variant::SlimPre || v == Variant::SlimPrePost;
}
inline bool has_post_injector(Variant v) {
  return v == Variant::SlimPost || v == Variant::SlimPrePost;
}
inline std::size_t tokens_per_step(Variant v) { return v == Variant::DT ? 3 : 2; }

struct ModelConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 1;
  std::size_t context_k = 20;
  std::size_t embed_dim = 128;
  double dropout = 0.1;
  std::string activation = "relu";
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  /// Capacity of the absolute timestep embedding table.
  std::size_t max_timestep = 1000;
  Variant variant = Variant::SlimPre;
  InjectorConfig injector;
  /// SlimPost: feed the injector the decoder output after the final LN.
  bool post_injector_after_final_ln = true;
  bool tanh_head = false;

  std::size_t sequence_length() const { return tokens_per_step(variant) * context_k; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Decoder input for one batch.
struct AssembledSequence {
  nn::Tensor tokens;                              // B x L x h
  nn::Mask token_mask;                            // B * L, 1 = attendable
  std::vector<std::size_t> action_read_positions; // k indices into [0, L)
  std::size_t length = 0;
};

/// Per-modality embeddings of a window batch, each [B x k x h]. Undefined
/// tensors are modalities a variant does not embed (e.g. rtg for Slim).
struct Embeddings {
  nn::Tensor rtg;
  nn::Tensor state;
  nn::Tensor action;
};

/// Interleaves embeddings step by step. With rtg defined the order is
/// (R', s', a') per step, otherwise (s', a'). A token is attendable when its
/// step is valid; action tokens additionally require action_mask.
AssembledSequence interleave_tokens(const Embeddings& e, const data::WindowBatch& batch);

/// Return-conditioned decision transformer with selectable layout.
class DecisionModel {
 public:
  DecisionModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Linear modality embeddings plus the shared timestep embedding. For the
  /// pre-conditioned variants the state embedding is the injector output.
  Embeddings embed_tokens(const data::WindowBatch& batch, bool training,
                          nn::DropoutRng& rng) const;
  AssembledSequence assemble(const data::WindowBatch& batch, bool training,
                             nn::DropoutRng& rng) const;
  /// Pre-LN causal transformer; returns [B x L x h] after the final LN, or
  /// before it when apply_final_ln is false.
  nn::Tensor decoder_forward(const AssembledSequence& seq, bool training, nn::DropoutRng& rng,
                             bool apply_final_ln = true) const;
  nn::Tensor action_head(const nn::Tensor& hidden) const;

  /// Predicted actions [B x k x d_a] read at the state slots.
  nn::Tensor forward(const data::WindowBatch& batch, bool training, nn::DropoutRng& rng) const;
  nn::Tensor forward(const data::WindowBatch& batch) const;

 private:
  struct Block {
    nn::Tensor ln1_g, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    nn::Tensor ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
  };

  void check_batch(const data::WindowBatch& batch) const;
  nn::Tensor timestep_embedding(const data::WindowBatch& batch) const;
  nn::Tensor block_forward(const Block& blk, const nn::Tensor& x, const nn::Mask& mask,
                           bool training, nn::DropoutRng& rng) const;

  ModelConfig cfg_;
  ParamStore params_;
  nn::Tensor rtg_w_, rtg_b_, state_w_, state_b_, action_w_, action_b_, time_table_;
  std::vector<Block> blocks_;
  nn::Tensor lnf_g_, lnf_b_;
  nn::Tensor head_w_, head_b_;
  std::unique_ptr<Injector> pre_injector_;
  std::unique_ptr<Injector> post_injector_;
};

/// Exact multiply-add accounting for one forward pass at batch size 1.
struct FlopReport {
  std::size_t sequence_length = 0;
  std::uint64_t embed = 0;
  std::uint64_t attn_proj = 0;
  std::uint64_t attn_score = 0;
  std::uint64_t attn_mix = 0;
  std::uint64_t mlp = 0;
  std::uint64_t injector = 0;        // all injector work, score and mix included
  std::uint64_t injector_score = 0;
  std::uint64_t injector_mix = 0;
  std::uint64_t head = 0;
  std::uint64_t softmax_elements = 0;
  std::uint64_t layernorm_elements = 0;

  std::uint64_t total() const {
    return embed + attn_proj + attn_score + attn_mix + mlp + injector + head;
  }
  /// The k^2 terms: decoder score+mix plus injector score+mix.
  std::uint64_t quadratic_terms() const {
    return attn_score + attn_mix + injector_score + injector_mix;
  }
  std::uint64_t decoder_quadratic_terms() const { return attn_score + attn_mix; }
  bool operator==(const FlopReport&) const = default;
};

FlopReport model_flops(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoint "SDTC"

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct Checkpoint {
  ModelConfig config;
  data::DatasetStats stats;
  std::string run_config_echo;
  std::vector<NamedParam> params;
};

void save_checkpoint(const std::filesystem::path& path, const DecisionModel& model,
                     const data::DatasetStats& stats, const std::string& run_config_echo);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds a model from a checkpoint; parameter names and shapes must match.
std::unique_ptr<DecisionModel> restore_model(const Checkpoint& ckpt);

}  // namespace slimdt::model
