// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace shiftadd {

/// Base for every error raised by the library. The CLI maps these to exit
/// status 1 and reports `kind()` in its structured error message.
class Error : public std::runtime_error {
 public:
  Error(const char *kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}
  const char *kind() const noexcept { return kind_; }

 private:
  const char *kind_;
};

#define SHIFTADD_DEFINE_ERROR(Name, Tag)                                     \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string &what) : Error(Tag, what) {}             \
  }

/// Shape or layer-configuration mismatch.
SHIFTADD_DEFINE_ERROR(ConfigError, "configuration");
/// Argument outside the mathematical domain of an operation (T <= 0, NaN).
SHIFTADD_DEFINE_ERROR(DomainError, "domain");
/// Value does not fit the fixed-point or integer frame.
SHIFTADD_DEFINE_ERROR(RangeError, "range");
SHIFTADD_DEFINE_ERROR(ParseError, "parse");
SHIFTADD_DEFINE_ERROR(IngestError, "ingestion");
/// Streaming element order or count violated.
SHIFTADD_DEFINE_ERROR(ProtocolError, "protocol");
SHIFTADD_DEFINE_ERROR(NumericError, "numeric");
SHIFTADD_DEFINE_ERROR(StratificationError, "stratification");
SHIFTADD_DEFINE_ERROR(SaturationError, "saturation");
SHIFTADD_DEFINE_ERROR(FormatError, "format");

#undef SHIFTADD_DEFINE_ERROR

}  // namespace shiftadd
