#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace slimdt::model {

struct NamedParam {
  std::string name;
  nn::Tensor value;
};

/// Ordered collection of trainable tensors. Registration order is the
/// serialization and optimizer order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  nn::Tensor normal(const std::string& name, nn::Shape shape, double stddev);
  nn::Tensor constant(const std::string& name, nn::Shape shape, double value);

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  const nn::Tensor* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  nn::Tensor add(const std::string& name, nn::Tensor t);

  std::mt19937_64 rng_;
  std::vector<NamedParam> entries_;
};

}  // namespace slimdt::model
