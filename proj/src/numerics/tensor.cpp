#include "numerics/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace slimdt::nn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(nn::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (nn::numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node_->data, requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local FlopCounter* g_active_counter = nullptr;
thread_local const char* g_category = "other";
}  // namespace

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<std::shared_ptr<Node>> inputs,
                  std::shared_ptr<Node> output, BackwardFn backward) {
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  for (auto& rec : records_) {
    for (auto& in : rec.inputs) {
      if (in->requires_grad) in->grad.assign(in->data.size(), 0.0);
    }
    rec.output->grad.assign(rec.output->data.size(), 0.0);
  }
  const auto& root = loss.node();
  root->grad.assign(1, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// FlopCounter

FlopCounter::Scope::Scope(FlopCounter& counter) : previous_(g_active_counter) {
  g_active_counter = &counter;
}

FlopCounter::Scope::~Scope() { g_active_counter = previous_; }

FlopCounter::Category::Category(const char* name) : previous_(g_category) {
  g_category = name;
}

FlopCounter::Category::~Category() { g_category = previous_; }

FlopCounter* FlopCounter::active() { return g_active_counter; }

const char* FlopCounter::current_category() { return g_category; }

void FlopCounter::bump(std::vector<std::pair<std::string, std::uint64_t>>& table,
                       const char* key, std::uint64_t n) {
  auto it = std::find_if(table.begin(), table.end(),
                         [&](const auto& e) { return e.first == key; });
  if (it == table.end()) {
    table.emplace_back(key, n);
  } else {
    it->second += n;
  }
}

void FlopCounter::add_macs(std::uint64_t n) { bump(macs_, g_category, n); }

void FlopCounter::add_elementwise(const char* op, std::uint64_t n) {
  bump(elementwise_, op, n);
}

std::uint64_t FlopCounter::macs(const std::string& category) const {
  for (const auto& [k, v] : macs_) {
    if (k == category) return v;
  }
  return 0;
}

std::uint64_t FlopCounter::elementwise(const std::string& op) const {
  for (const auto& [k, v] : elementwise_) {
    if (k == op) return v;
  }
  return 0;
}

std::uint64_t FlopCounter::total_macs() const {
  std::uint64_t total = 0;
  for (const auto& e : macs_) total += e.second;
  return total;
}

}  // namespace slimdt::nn
