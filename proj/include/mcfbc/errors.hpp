#pragma once

#include <stdexcept>
#include <string>

namespace mcfbc {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation received an image tagged with the wrong color space.
struct InvalidColorSpace : Error {
  using Error::Error;
};

/// Tensor/matrix dimensions do not line up.
struct ShapeMismatch : Error {
  using Error::Error;
};

/// A metric that needs both classes was given a single-class score set.
struct MissingClass : Error {
  using Error::Error;
};

/// A linear system could not be solved even after ridge regularization.
struct SingularSystem : Error {
  using Error::Error;
};

/// Manifest file is missing, malformed, or violates split invariants.
struct ManifestError : Error {
  using Error::Error;
};

/// File could not be read, written, or decoded.
struct IoError : Error {
  using Error::Error;
};

/// Run configuration is malformed (unknown keys, bad values).
struct ConfigError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (e.g. gradients).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mcfbc
