#pragma once

#include <stdexcept>
#include <string>

namespace unidoor {

// Invalid names, indices, bounds or hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values reaching the networks or the losses. `layer` is the
// index of the affine layer where the value was detected, or -1 when the
// problem was found outside a network (input validation, loss terms).
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int layer = -1)
      : std::runtime_error(what), layer_(layer) {}

  int layer() const { return layer_; }

 private:
  int layer_;
};

// Operation not allowed in the current state (stepping a finished episode,
// mismatched shapes between components).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace unidoor
