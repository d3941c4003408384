#include "adasim/error.hpp"

namespace adasim {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kTape: return "tape error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kIndexRange: return "index out of range";
    case ErrorKind::kEmptyCache: return "empty cache";
    case ErrorKind::kOrdering: return "ordering error";
    case ErrorKind::kWarmup: return "warmup error";
    case ErrorKind::kEmptySupport: return "empty support";
    case ErrorKind::kEmptyCandidate: return "empty candidate set";
    case ErrorKind::kPartition: return "partition error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kCollapse: return "collapse";
  }
  return "error";
}

}  // namespace adasim
