#pragma once

#include <stdexcept>
#include <string>

namespace imec {

// Every failure raised by the library carries a short stable code
// ("kl-undefined", "length-mismatch", "nontermination", ...) plus a message.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

}  // namespace imec
