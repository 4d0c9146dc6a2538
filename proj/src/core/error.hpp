#pragma once

#include <stdexcept>
#include <string>

namespace korth {

enum class ErrorCode {
  InvalidArgument,
  BadMagic,
  BadVersion,
  BadDtype,
  Truncated,
  SizeMismatch,
  Overflow,
  Parse,
  Validation,
  Io,
  Degenerate,
  Numeric,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace korth
