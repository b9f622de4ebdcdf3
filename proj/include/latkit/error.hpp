#pragma once

#include <stdexcept>
#include <string>

namespace latkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A class label or token id falls outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A precondition on call order or argument state was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input (IDX files, checkpoints, manifests).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a NaN or infinite loss.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

class ImplantationError : public Error {
 public:
  using Error::Error;
};

}  // namespace latkit
