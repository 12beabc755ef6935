#pragma once

#include <cstddef>

#include "numerics/ops.hpp"

namespace slimdt::model {

/// Key mask for a [B x Lq x Lk] score tensor: entry (b, i, j) is kept when
/// key j is valid in batch row b and, with `causal`, j <= i. Query positions
/// are aligned to key positions (Lq == Lk) when causal.
nn::Mask attention_mask(std::size_t batch, std::size_t lq, std::size_t lk,
                        const nn::Mask& key_valid, bool causal);

/// Scaled dot-product attention over `heads` heads with the given
/// [B x Lq x Lk] mask (replicated across heads). Inputs are already
/// projected: q is [B x Lq x h], k and v are [B x Lk x h]. Matrix-product
/// costs are booked under the supplied FLOP categories.
nn::Tensor scaled_dot_attention(const nn::Tensor& q, const nn::Tensor& k,
                                const nn::Tensor& v, const nn::Mask& mask,
                                std::size_t heads, double dropout, bool training,
                                nn::DropoutRng& rng, const char* score_category,
                                const char* mix_category);

}  // namespace slimdt::model
