#pragma once

#include <stdexcept>
#include <string>

namespace supertoda {

// Domain errors are violated mathematical preconditions (exceptional rho,
// nontrivial kernel, bad mesh); usage errors are malformed requests.
enum class ErrorKind { domain, usage, io, internal };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorKind::domain, what);
}

[[noreturn]] inline void fail_usage(const std::string& what) {
  throw Error(ErrorKind::usage, what);
}

[[noreturn]] inline void fail_io(const std::string& what) {
  throw Error(ErrorKind::io, what);
}

[[noreturn]] inline void fail_internal(const std::string& what) {
  throw Error(ErrorKind::internal, what);
}

} // namespace supertoda
