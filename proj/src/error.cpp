#include "kdd/error.hpp"

namespace kdd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::InvalidBandwidth: return "InvalidBandwidth";
    case ErrorKind::InvalidGraph: return "InvalidGraph";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::DegenerateSet: return "DegenerateSet";
    case ErrorKind::NoStatisticsAvailable: return "NoStatisticsAvailable";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Error";
}

}  // namespace kdd
