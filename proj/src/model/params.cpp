#include "model/params.hpp"

#include "errors.hpp"

namespace slimdt::model {

nn::Tensor ParamStore::add(const std::string& name, nn::Tensor t) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  entries_.push_back({name, t});
  return t;
}

nn::Tensor ParamStore::normal(const std::string& name, nn::Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(nn::numel(shape));
  for (double& v : values) v = dist(rng_);
  return add(name, nn::Tensor::from(std::move(shape), std::move(values), true));
}

nn::Tensor ParamStore::constant(const std::string& name, nn::Shape shape, double value) {
  return add(name, nn::Tensor::full(std::move(shape), value, true));
}

const nn::Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

}  // namespace slimdt::model
