#pragma once

#include <stdexcept>
#include <string>

namespace sfpca {

// Exceptions thrown by the library. The CLI maps each category to an exit code.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, dimension mismatches, malformed configuration. Exit code 1.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

// Input data violates a contract (CSV format, out-of-domain observation,
// degenerate sample set). Exit code 2.
class DataError : public Error {
public:
  using Error::Error;
};

// A factorization or evaluation produced a non-finite or singular result.
// Exit code 3.
class NumericalError : public Error {
public:
  using Error::Error;
};

} // namespace sfpca
