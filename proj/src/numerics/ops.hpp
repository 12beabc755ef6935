#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/tensor.hpp"

namespace slimdt::nn {

/// Counter-based random stream for dropout masks. Each dropout call consumes
/// one counter value; the mask bits are a pure function of (seed, call, index).
class DropoutRng {
 public:
  explicit DropoutRng(std::uint64_t seed = 0) : seed_(seed) {}
  std::uint64_t next_call() { return counter_++; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t calls() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Boolean masks are stored one byte per element, nonzero = keep.
using Mask = std::vector<std::uint8_t>;

Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched product over the leading axis. With transpose_b, b is [G x p x n]
/// and the result is a . b^T.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[... x n] . w[n x p] (+ bias[p]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor dropout(const Tensor& x, double p, bool training, DropoutRng& rng);

/// Softmax over the last axis. Masked entries are excluded and produce 0; a
/// row with every entry masked yields all zeros.
Tensor softmax_rows(const Tensor& x, const Mask* mask = nullptr);

/// Normalizes each row of the last axis to zero mean, unit variance.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

/// x * gamma + beta with gamma, beta of length x.shape().back().
Tensor row_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);

/// Rows of table[N x h] selected by indices; output shape index_shape + [h].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> indices,
                        const Shape& index_shape);

Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);

/// x[B x L x h] -> [B x P x h] picking the listed sequence positions.
Tensor select_positions(const Tensor& x, std::span<const std::size_t> positions);

/// Interleaves n tensors [B x k x h] step by step into [B x n*k x h].
Tensor interleave_steps(std::span<const Tensor> parts);

/// [B x L x h] -> [B*H x L x h/H] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);

Tensor sum(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);

/// Mean squared error over positions whose mask entry is set. pred and
/// target are [B x k x d]; mask has B*k entries. Returns 0 when nothing is
/// valid.
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Mask& mask);

}  // namespace slimdt::nn
