#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace slimdt::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Handle to a dense row-major double tensor.
///
/// Copies share the underlying storage. Values are treated as immutable once
/// an op has consumed them; only parameters are written in place (by the
/// optimizer) and gradient buffers are written by the tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  /// Detached deep copy of the values.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor wrap(std::shared_ptr<Node> node);

  std::shared_ptr<Node> node_;
};

Tensor wrap(std::shared_ptr<Node> node);

/// Ordered record of differentiable operations.
///
/// Ops executed while a tape is active (see Tape::Scope) append one record
/// per op whose inputs require gradients. Records are appended after their
/// inputs exist, so the record order is a topological order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };

  /// Activates a tape on the current thread for the scope's lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<std::shared_ptr<Node>> inputs,
              std::shared_ptr<Node> output, BackwardFn backward);

  /// Reverse-mode accumulation from a scalar loss. Gradient buffers of every
  /// node touched by the tape are reset first, so repeated calls over the same
  /// tape produce identical gradients.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Multiply-add accounting hook used by the FLOP benchmark.
///
/// When a counter is active on the thread, matrix-product ops add their
/// multiply-add count under the innermost FlopCounter::Category, and softmax
/// and layer_norm add the number of elements they process.
class FlopCounter {
 public:
  class Scope {
   public:
    explicit Scope(FlopCounter& counter);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    FlopCounter* previous_;
  };

  class Category {
   public:
    explicit Category(const char* name);
    ~Category();
    Category(const Category&) = delete;
    Category& operator=(const Category&) = delete;

   private:
    const char* previous_;
  };

  static FlopCounter* active();
  static const char* current_category();

  void add_macs(std::uint64_t n);
  void add_elementwise(const char* op, std::uint64_t n);

  std::uint64_t macs(const std::string& category) const;
  std::uint64_t elementwise(const std::string& op) const;
  std::uint64_t total_macs() const;
  const std::vector<std::pair<std::string, std::uint64_t>>& mac_entries() const {
    return macs_;
  }

 private:
  static void bump(std::vector<std::pair<std::string, std::uint64_t>>& table,
                   const char* key, std::uint64_t n);

  std::vector<std::pair<std::string, std::uint64_t>> macs_;
  std::vector<std::pair<std::string, std::uint64_t>> elementwise_;
};

}  // namespace slimdt::nn
