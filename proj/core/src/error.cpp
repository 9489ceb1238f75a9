// SPDX-License-Identifier: Apache-2.0
#include "csa/error.hpp"

namespace csa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Index: return "index error";
    case ErrorKind::Rank: return "rank error";
    case ErrorKind::State: return "state error";
    case ErrorKind::Geometry: return "geometry error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::UnsupportedFormat: return "unsupported format";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Integrity: return "integrity error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Alignment: return "alignment error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Version:
      return kExitConfig;
    case ErrorKind::Data:
    case ErrorKind::Parse:
    case ErrorKind::UnsupportedFormat:
    case ErrorKind::Io:
    case ErrorKind::Integrity:
    case ErrorKind::Alignment:
      return kExitData;
    case ErrorKind::Numeric:
      return kExitDivergence;
    default:
      return kExitFailure;
  }
}

}  // namespace csa
