// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace csa {

enum class ErrorKind {
  Shape,
  Domain,
  Index,
  Rank,
  State,
  Geometry,
  Numeric,
  Config,
  Data,
  Parse,
  UnsupportedFormat,
  Io,
  Integrity,
  Version,
  Alignment,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` selects the category and the
/// CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Exit codes used by the command line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
};

int exit_code_for(ErrorKind kind);

}  // namespace csa
