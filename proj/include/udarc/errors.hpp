#pragma once

#include <stdexcept>
#include <string>

namespace udarc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between tensors.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range id, index or target.
struct IndexError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// API precondition violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Bad user-supplied input (files, corpora).
struct InputError : Error {
  using Error::Error;
};

// Malformed dataset file; message carries the path to the offending record.
struct ParseError : InputError {
  using InputError::InputError;
};

// Invalid experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint missing, corrupt, or incompatible.
struct ArtifactError : Error {
  using Error::Error;
};

}  // namespace udarc
