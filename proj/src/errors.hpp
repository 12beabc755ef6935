#pragma once

#include <stdexcept>
#include <string>

#include "data/trajectory.hpp"
#include "numerics/tensor.hpp"

namespace slimdt {

using nn::ContractError;
using nn::DimensionError;
using data::FormatError;
using data::IoError;

/// Invalid or inconsistent configuration. `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what, std::string field = {})
      : std::invalid_argument(field.empty() ? what : field + ": " + what),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// A computation produced NaN or infinity.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace slimdt
