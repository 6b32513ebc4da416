// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qcomm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad ChannelSpec, unknown keys, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// File system or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qcomm
