#pragma once

#include <stdexcept>
#include <string>

namespace d3vo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: files, manifests, configs, dimensions.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Geometrically invalid request (non-positive depth, degenerate alignment).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Singular or indefinite systems, non-finite energies.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace d3vo
