#include "numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace slimdt::nn {

namespace {

using NodePtr = std::shared_ptr<Node>;

Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

Tensor make_output(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return wrap(std::move(node));
}

void count_macs(std::uint64_t n) {
  if (auto* c = FlopCounter::active()) c->add_macs(n);
}

void count_elements(const char* op, std::uint64_t n) {
  if (auto* c = FlopCounter::active()) c->add_elementwise(op, n);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank_at_least(const char* op, const Tensor& x, std::size_t r) {
  if (x.rank() < r) {
    throw DimensionError(std::string(op) + ": expected rank >= " +
                         std::to_string(r) + ", got " + shape_str(x.shape()));
  }
}

// c[m x p] += a[m x n] . b[n x p]
// Four output rows share each pass over a row of b.
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t m, std::size_t n, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * p;
    double* c1 = c0 + p;
    double* c2 = c1 + p;
    double* c3 = c2 + p;
    const double* a0 = a + i * n;
    for (std::size_t l = 0; l < n; ++l) {
      const double v0 = a0[l], v1 = a0[n + l], v2 = a0[2 * n + l], v3 = a0[3 * n + l];
      const double* brow = b + l * p;
      for (std::size_t j = 0; j < p; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * n;
    for (std::size_t l = 0; l < n; ++l) {
      const double av = arow[l];
      const double* brow = b + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x p] += a[m x n] . b[p x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t p) {
  thread_local std::vector<double> bt;
  bt.resize(n * p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t l = 0; l < n; ++l) bt[l * p + j] = b[j * n + l];
  }
  gemm_nn(a, bt.data(), c, m, n, p);
}

// c[n x p] += a[m x n]^T . b[m x p]
void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c,
             std::size_t m, std::size_t n, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * n;
    const double* b0 = b + i * p;
    const double* b1 = b0 + p;
    const double* b2 = b1 + p;
    const double* b3 = b2 + p;
    for (std::size_t l = 0; l < n; ++l) {
      const double v0 = a0[l], v1 = a0[n + l], v2 = a0[2 * n + l], v3 = a0[3 * n + l];
      double* crow = c + l * p;
      for (std::size_t j = 0; j < p; ++j) {
        crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * n;
    const double* brow = b + i * p;
    for (std::size_t l = 0; l < n; ++l) {
      const double av = arow[l];
      double* crow = c + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// products

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  std::vector<double> out(m * p, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, n, p);
  count_macs(m * n * p);
  Tensor y = make_output({m, p}, std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn, m, n, p] {
      if (an->requires_grad) {
        an->ensure_grad();
        gemm_nt(yn->grad.data(), bn->data.data(), an->grad.data(), m, p, n);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        gemm_tn(an->data.data(), yn->grad.data(), bn->grad.data(), m, n, p);
      }
    });
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) +
                         (transpose_b ? " (b transposed)" : ""));
  }
  const std::size_t g = a.dim(0), m = a.dim(1), n = a.dim(2);
  const std::size_t p = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(g * m * p, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < g; ++i) {
    if (transpose_b) {
      gemm_nt(ad + i * m * n, bd + i * p * n, out.data() + i * m * p, m, n, p);
    } else {
      gemm_nn(ad + i * m * n, bd + i * n * p, out.data() + i * m * p, m, n, p);
    }
  }
  count_macs(g * m * n * p);
  Tensor y = make_output({g, m, p}, std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn, g, m, n, p, transpose_b] {
      const double* gy = yn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g; ++i) {
          double* ga = an->grad.data() + i * m * n;
          if (transpose_b) {
            // da = gy . b
            gemm_nn(gy + i * m * p, bn->data.data() + i * p * n, ga, m, p, n);
          } else {
            // da = gy . b^T
            gemm_nt(gy + i * m * p, bn->data.data() + i * n * p, ga, m, p, n);
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g; ++i) {
          if (transpose_b) {
            // db[p x n] = gy^T . a
            gemm_tn(gy + i * m * p, an->data.data() + i * m * n,
                    bn->grad.data() + i * p * n, m, p, n);
          } else {
            // db[n x p] = a^T . gy
            gemm_tn(an->data.data() + i * m * n, gy + i * m * p,
                    bn->grad.data() + i * n * p, m, n, p);
          }
        }
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank_at_least("linear", x, 1);
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
  }
  const std::size_t n = w.dim(0), p = w.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != p)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(rows * p, 0.0);
  if (bias.defined()) {
    const double* bd = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bd, bd + p, out.data() + r * p);
  }
  gemm_nn(x.data().data(), w.data().data(), out.data(), rows, n, p);
  count_macs(rows * n * p);
  Shape shape = x.shape();
  shape.back() = p;
  Tensor y = make_output(std::move(shape), std::move(out));
  if (Tape* tape = tape_for({&x, &w, &bias})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), wn = w.node(), yn = y.node();
    NodePtr bn = bias.defined() ? bias.node() : nullptr;
    std::vector<NodePtr> inputs{xn, wn};
    if (bn) inputs.push_back(bn);
    tape->record(std::move(inputs), yn, [xn, wn, bn, yn, rows, n, p] {
      const double* gy = yn->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        gemm_nt(gy, wn->data.data(), xn->grad.data(), rows, p, n);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        gemm_tn(xn->data.data(), gy, wn->grad.data(), rows, n, p);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < p; ++j) bn->grad[j] += gy[r * p + j];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn] {
      for (const NodePtr& in : {an, bn}) {
        if (!in->requires_grad) continue;
        in->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) in->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
          an->grad[i] += yn->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i)
          bn->grad[i] += yn->grad[i] * an->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, factor] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * factor;
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (xn->data[i] > 0.0) xn->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        const double t = yn->data[i];
        xn->grad[i] += yn->grad[i] * (1.0 - t * t);
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double p, bool training, DropoutRng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const std::uint64_t call = rng.next_call();
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factors(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    factors[i] = uniform01(rng.seed(), call, i) < p ? 0.0 : keep_scale;
    out[i] = x.data()[i] * factors[i];
  }
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, factors = std::move(factors)] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * factors[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// normalization

Tensor softmax_rows(const Tensor& x, const Mask* mask) {
  require_rank_at_least("softmax_rows", x, 1);
  if (mask && mask->size() != x.numel()) {
    throw DimensionError("softmax_rows: mask has " + std::to_string(mask->size()) +
                         " entries for input " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  const double* xd = x.data().data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[base + j]) continue;
      mx = std::max(mx, xd[base + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[base + j]) continue;
      out[base + j] = std::exp(xd[base + j] - mx);
      denom += out[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= denom;
  }
  count_elements("softmax", x.numel());
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, rows, n] {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = yn->data.data() + r * n;
        const double* gr = yn->grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        double* gx = xn->grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_rank_at_least("layer_norm", x, 1);
  const std::size_t d = x.shape().back();
  if (d == 0) throw ContractError("layer_norm: feature dimension must be >= 1");
  const std::size_t rows = x.numel() / d;
  const double* xd = x.data().data();
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mean) * inv_std[r];
  }
  count_elements("layernorm", x.numel());
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, rows, d, inv_std = std::move(inv_std)] {
      xn->ensure_grad();
      const double dd = static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = yn->data.data() + r * d;
        const double* gr = yn->grad.data() + r * d;
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          g_mean += gr[j];
          gy_mean += gr[j] * yr[j];
        }
        g_mean /= dd;
        gy_mean /= dd;
        double* gx = xn->grad.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          gx[j] += inv_std[r] * (gr[j] - g_mean - yr[j] * gy_mean);
        }
      }
    });
  }
  return y;
}

Tensor row_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank_at_least("row_affine", x, 1);
  const std::size_t d = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw DimensionError("row_affine: gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()) + " incompatible with " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = x.data()[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  Tensor y = make_output(x.shape(), std::move(out));
  if (Tape* tape = tape_for({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
    tape->record({xn, gn, bn}, yn, [xn, gn, bn, yn, rows, d] {
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const double g = yn->grad[r * d + j];
          if (xn->requires_grad) xn->grad[r * d + j] += g * gn->data[j];
          if (gn->requires_grad) gn->grad[j] += g * xn->data[r * d + j];
          if (bn->requires_grad) bn->grad[j] += g;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// indexing and layout

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> indices,
                        const Shape& index_shape) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be 2-D, got " +
                         shape_str(table.shape()));
  }
  if (numel(index_shape) != indices.size()) {
    throw DimensionError("embedding_lookup: " + std::to_string(indices.size()) +
                         " indices for index shape " + shape_str(index_shape));
  }
  const std::size_t rows = table.dim(0), h = table.dim(1);
  std::vector<std::size_t> idx(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= rows) {
      throw ContractError("embedding_lookup: index " + std::to_string(indices[i]) +
                          " outside table of " + std::to_string(rows) + " rows");
    }
    idx[i] = static_cast<std::size_t>(indices[i]);
  }
  std::vector<double> out(idx.size() * h);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(table.data().data() + idx[i] * h, h, out.data() + i * h);
  }
  Shape shape = index_shape;
  shape.push_back(h);
  Tensor y = make_output(std::move(shape), std::move(out));
  if (Tape* tape = tape_for({&table})) {
    y.set_requires_grad(true);
    NodePtr tn = table.node(), yn = y.node();
    tape->record({tn}, yn, [tn, yn, h, idx = std::move(idx)] {
      tn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < h; ++j) tn->grad[idx[i] * h + j] += yn->grad[i * h + j];
      }
    });
  }
  return y;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  require_rank_at_least("concat_last", a, 1);
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (b.rank() != a.rank() || lead_a != lead_b) {
    throw DimensionError("concat_last: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t na = a.shape().back(), nb = b.shape().back(), n = na + nb;
  const std::size_t rows = numel(lead_a);
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * na, na, out.data() + r * n);
    std::copy_n(b.data().data() + r * nb, nb, out.data() + r * n + na);
  }
  Shape shape = a.shape();
  shape.back() = n;
  Tensor y = make_output(std::move(shape), std::move(out));
  if (Tape* tape = tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    tape->record({an, bn}, yn, [an, bn, yn, rows, na, nb, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < na; ++j) an->grad[r * na + j] += yn->grad[r * n + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < nb; ++j) bn->grad[r * nb + j] += yn->grad[r * n + na + j];
      }
    });
  }
  return y;
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
  require_rank_at_least("slice_last", x, 1);
  const std::size_t n = x.shape().back();
  if (start + length > n) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * n + start, length, out.data() + r * length);
  }
  Shape shape = x.shape();
  shape.back() = length;
  Tensor y = make_output(std::move(shape), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, rows, n, start, length] {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < length; ++j)
          xn->grad[r * n + start + j] += yn->grad[r * length + j];
    });
  }
  return y;
}

Tensor select_positions(const Tensor& x, std::span<const std::size_t> positions) {
  if (x.rank() != 3) {
    throw DimensionError("select_positions: expected [B x L x h], got " +
                         shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), len = x.dim(1), h = x.dim(2), np = positions.size();
  for (std::size_t p : positions) {
    if (p >= len) {
      throw ContractError("select_positions: position " + std::to_string(p) +
                          " outside sequence of length " + std::to_string(len));
    }
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  std::vector<double> out(b * np * h);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < np; ++t)
      std::copy_n(x.data().data() + (i * len + pos[t]) * h, h, out.data() + (i * np + t) * h);
  Tensor y = make_output({b, np, h}, std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn, b, len, h, pos = std::move(pos)] {
      xn->ensure_grad();
      const std::size_t np = pos.size();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < np; ++t)
          for (std::size_t j = 0; j < h; ++j)
            xn->grad[(i * len + pos[t]) * h + j] += yn->grad[(i * np + t) * h + j];
    });
  }
  return y;
}

Tensor interleave_steps(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("interleave_steps: no inputs");
  const Tensor& first = parts[0];
  if (first.rank() != 3) {
    throw DimensionError("interleave_steps: expected [B x k x h], got " +
                         shape_str(first.shape()));
  }
  for (const Tensor& p : parts) {
    if (p.shape() != first.shape()) {
      throw DimensionError("interleave_steps: shape mismatch " + shape_str(first.shape()) +
                           " vs " + shape_str(p.shape()));
    }
  }
  const std::size_t np = parts.size();
  const std::size_t b = first.dim(0), k = first.dim(1), h = first.dim(2);
  const std::size_t len = np * k;
  std::vector<double> out(b * len * h);
  for (std::size_t q = 0; q < np; ++q) {
    const double* src = parts[q].data().data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < k; ++t)
        std::copy_n(src + (i * k + t) * h, h, out.data() + (i * len + t * np + q) * h);
  }
  Tensor y = make_output({b, len, h}, std::move(out));
  Tape* tape = Tape::active();
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    y.set_requires_grad(true);
    std::vector<NodePtr> inputs;
    for (const Tensor& p : parts) inputs.push_back(p.node());
    NodePtr yn = y.node();
    tape->record(inputs, yn, [inputs, yn, b, k, h, np, len] {
      for (std::size_t q = 0; q < np; ++q) {
        const NodePtr& in = inputs[q];
        if (!in->requires_grad) continue;
        in->ensure_grad();
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < h; ++j)
              in->grad[(i * k + t) * h + j] += yn->grad[(i * len + t * np + q) * h + j];
      }
    });
  }
  return y;
}

namespace {

// Moves between [B x L x H x dh] and [B x H x L x dh] layouts.
Tensor permute_heads(const Tensor& x, std::size_t b, std::size_t len, std::size_t heads,
                     std::size_t dh, bool to_heads) {
  std::vector<double> out(x.numel());
  auto src_index = [=](std::size_t i, std::size_t t, std::size_t hd, std::size_t j) {
    return to_heads ? ((i * len + t) * heads + hd) * dh + j
                    : ((i * heads + hd) * len + t) * dh + j;
  };
  auto dst_index = [=](std::size_t i, std::size_t t, std::size_t hd, std::size_t j) {
    return to_heads ? ((i * heads + hd) * len + t) * dh + j
                    : ((i * len + t) * heads + hd) * dh + j;
  };
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t hd = 0; hd < heads; ++hd)
        for (std::size_t j = 0; j < dh; ++j)
          out[dst_index(i, t, hd, j)] = x.data()[src_index(i, t, hd, j)];
  Shape shape = to_heads ? Shape{b * heads, len, dh} : Shape{b, len, heads * dh};
  Tensor y = make_output(std::move(shape), std::move(out));
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [=] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t hd = 0; hd < heads; ++hd)
            for (std::size_t j = 0; j < dh; ++j)
              xn->grad[src_index(i, t, hd, j)] += yn->grad[dst_index(i, t, hd, j)];
    });
  }
  return y;
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                         std::to_string(heads) + " heads");
  }
  if (heads == 1) return x;
  return permute_heads(x, x.dim(0), x.dim(1), heads, x.dim(2) / heads, true);
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: cannot merge " + shape_str(x.shape()) + " from " +
                         std::to_string(heads) + " heads");
  }
  if (heads == 1) return x;
  return permute_heads(x, x.dim(0) / heads, x.dim(1), heads, x.dim(2), false);
}

// ---------------------------------------------------------------------------
// reductions and losses

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = make_output({}, {acc});
  if (Tape* tape = tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), yn = y.node();
    tape->record({xn}, yn, [xn, yn] {
      xn->ensure_grad();
      for (double& g : xn->grad) g += yn->grad[0];
    });
  }
  return y;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  Tensor y = make_output({}, {n ? acc / static_cast<double>(n) : 0.0});
  if (Tape* tape = tape_for({&pred, &target})) {
    y.set_requires_grad(true);
    NodePtr pn = pred.node(), tn = target.node(), yn = y.node();
    tape->record({pn, tn}, yn, [pn, tn, yn, n] {
      if (n == 0) return;
      const double c = 2.0 * yn->grad[0] / static_cast<double>(n);
      if (pn->requires_grad) pn->ensure_grad();
      if (tn->requires_grad) tn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pn->data[i] - tn->data[i];
        if (pn->requires_grad) pn->grad[i] += c * d;
        if (tn->requires_grad) tn->grad[i] -= c * d;
      }
    });
  }
  return y;
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Mask& mask) {
  require_same_shape("masked_mse", pred, target);
  if (pred.rank() != 3 || mask.size() != pred.dim(0) * pred.dim(1)) {
    throw DimensionError("masked_mse: mask of " + std::to_string(mask.size()) +
                         " entries for prediction " + shape_str(pred.shape()));
  }
  const std::size_t d = pred.dim(2);
  std::size_t valid = 0;
  double acc = 0.0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    ++valid;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = pred.data()[r * d + j] - target.data()[r * d + j];
      acc += e * e;
    }
  }
  const std::size_t count = valid * d;
  Tensor y = make_output({}, {count ? acc / static_cast<double>(count) : 0.0});
  if (Tape* tape = tape_for({&pred, &target})) {
    y.set_requires_grad(true);
    NodePtr pn = pred.node(), tn = target.node(), yn = y.node();
    tape->record({pn, tn}, yn, [pn, tn, yn, mask, d, count] {
      if (pn->requires_grad) pn->ensure_grad();
      if (tn->requires_grad) tn->ensure_grad();
      if (count == 0) return;
      const double c = 2.0 * yn->grad[0] / static_cast<double>(count);
      for (std::size_t r = 0; r < mask.size(); ++r) {
        if (!mask[r]) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double e = pn->data[r * d + j] - tn->data[r * d + j];
          if (pn->requires_grad) pn->grad[r * d + j] += c * e;
          if (tn->requires_grad) tn->grad[r * d + j] -= c * e;
        }
      }
    });
  }
  return y;
}

}  // namespace slimdt::nn
