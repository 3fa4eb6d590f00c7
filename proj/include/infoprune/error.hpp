#pragma once

#include <stdexcept>
#include <string>

namespace infoprune {

enum class ErrorKind {
  io,            // filesystem / unreadable input
  validation,    // malformed archive, manifest, config or plan
  verification,  // pruned/masked equivalence check failed
};

/// Every failure in the library surfaces as this exception; the kind drives
/// the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorKind::validation, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(what);
}

}  // namespace infoprune
