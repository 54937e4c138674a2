// Copyright 2026 The Loupe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace loupe {

// Maps onto the CLI exit codes: config -> 2, numeric/contract -> 3, io -> 4.
enum class ErrorKind {
  kDimension,
  kNumeric,
  kIndex,
  kContract,
  kState,
  kArgument,
  kConfig,
  kCompatibility,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define LOUPE_DEFINE_ERROR(Name, Kind)                                 \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

LOUPE_DEFINE_ERROR(DimensionError, kDimension)
LOUPE_DEFINE_ERROR(NumericError, kNumeric)
LOUPE_DEFINE_ERROR(IndexError, kIndex)
LOUPE_DEFINE_ERROR(ContractError, kContract)
LOUPE_DEFINE_ERROR(StateError, kState)
LOUPE_DEFINE_ERROR(ArgumentError, kArgument)
LOUPE_DEFINE_ERROR(ConfigError, kConfig)
LOUPE_DEFINE_ERROR(CompatibilityError, kCompatibility)
LOUPE_DEFINE_ERROR(IoError, kIo)

#undef LOUPE_DEFINE_ERROR

int exit_code_for(ErrorKind kind) noexcept;

}  // namespace loupe
