#include "model/attention.hpp"

#include <algorithm>
#include <cmath>

namespace slimdt::model {

nn::Mask attention_mask(std::size_t batch, std::size_t lq, std::size_t lk,
                        const nn::Mask& key_valid, bool causal) {
  if (key_valid.size() != batch * lk) {
    throw nn::DimensionError("attention_mask: " + std::to_string(key_valid.size()) +
                             " key flags for batch " + std::to_string(batch) +
                             " x length " + std::to_string(lk));
  }
  nn::Mask mask(batch * lq * lk, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        const bool keep = key_valid[b * lk + j] && (!causal || j <= i);
        mask[(b * lq + i) * lk + j] = keep ? 1 : 0;
      }
    }
  }
  return mask;
}

nn::Tensor scaled_dot_attention(const nn::Tensor& q, const nn::Tensor& k,
                                const nn::Tensor& v, const nn::Mask& mask,
                                std::size_t heads, double dropout, bool training,
                                nn::DropoutRng& rng, const char* score_category,
                                const char* mix_category) {
  const std::size_t batch = q.dim(0), lq = q.dim(1), lk = k.dim(1);
  const std::size_t head_dim = q.dim(2) / heads;
  if (mask.size() != batch * lq * lk) {
    throw nn::DimensionError("scaled_dot_attention: mask size " +
                             std::to_string(mask.size()) + " for scores [" +
                             std::to_string(batch) + "x" + std::to_string(lq) + "x" +
                             std::to_string(lk) + "]");
  }
  const nn::Tensor qh = nn::split_heads(q, heads);
  const nn::Tensor kh = nn::split_heads(k, heads);
  const nn::Tensor vh = nn::split_heads(v, heads);

  nn::Tensor scores;
  {
    nn::FlopCounter::Category cat(score_category);
    scores = nn::bmm(qh, kh, /*transpose_b=*/true);
  }
  scores = nn::scale(scores, 1.0 / std::sqrt(static_cast<double>(head_dim)));

  const nn::Mask* head_mask = &mask;
  nn::Mask replicated;
  if (heads > 1) {
    replicated.resize(batch * heads * lq * lk);
    const std::size_t block = lq * lk;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(mask.begin() + b * block, block,
                    replicated.begin() + (b * heads + h) * block);
    head_mask = &replicated;
  }
  nn::Tensor probs = nn::softmax_rows(scores, head_mask);
  probs = nn::dropout(probs, dropout, training, rng);

  nn::Tensor mixed;
  {
    nn::FlopCounter::Category cat(mix_category);
    mixed = nn::bmm(probs, vh);
  }
  return nn::merge_heads(mixed, heads);
}

}  // namespace slimdt::model
