// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace r2lab {

/// Base class for every library error so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };

}  // namespace r2lab
