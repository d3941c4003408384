#pragma once

#include <stdexcept>
#include <string>

namespace adasim {

enum class ErrorKind {
  kShape,
  kTape,
  kConfig,
  kDegenerateInput,
  kIndexRange,
  kEmptyCache,
  kOrdering,
  kWarmup,
  kEmptySupport,
  kEmptyCandidate,
  kPartition,
  kContract,
  kParse,
  kSchema,
  kIo,
  kFormat,
  kInsufficientData,
  kCollapse,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace adasim
