#pragma once

#include <stdexcept>

namespace dcspp {

/// Tensor shapes that do not fit the operation they were passed to.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyperparameters or network/training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or mismatched files: PPM, labels, manifests, anchors, weights.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of stateful objects, e.g. backward without a cached forward.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dcspp
