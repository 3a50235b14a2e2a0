#pragma once

#include <stdexcept>
#include <string>

namespace divreg {

// Base of everything the library throws on a contract violation.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A point was queried outside the domain covered by a control grid.
class DomainError : public Error {
  public:
    using Error::Error;
};

class IndexError : public Error {
  public:
    using Error::Error;
};

// Array or parameter-vector length does not match the expected lattice.
class ShapeError : public Error {
  public:
    using Error::Error;
};

// Mismatched voxel grids, frames or spacings.
class GeometryError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

// Malformed or unsupported file content.
class ParseError : public Error {
  public:
    using Error::Error;
};

class UnsupportedOperation : public Error {
  public:
    using Error::Error;
};

// Iterative linear or nonlinear solve that failed to reach its tolerance.
class SolverError : public Error {
  public:
    using Error::Error;
};

} // namespace divreg
