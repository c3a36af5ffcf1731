#include "rwbsde/errors.hpp"

namespace rwbsde {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Registry: return "registry";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Config: return "configuration";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::NoReference: return "no-reference";
    case ErrorKind::StateLookup: return "state-lookup";
    case ErrorKind::RareEvent: return "rare-event";
    case ErrorKind::Ellipticity: return "ellipticity";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace rwbsde
