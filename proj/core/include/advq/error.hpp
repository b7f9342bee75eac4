#pragma once

#include <stdexcept>
#include <string>

namespace advq {

// All recoverable failures carry a short machine-parseable class token
// (e.g. "shape-mismatch", "config-parse") plus a human-readable message.
// The CLI prints them as "error: <cls>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& message)
      : std::runtime_error(cls + ": " + message), cls_(std::move(cls)) {}

  const std::string& cls() const { return cls_; }

 private:
  std::string cls_;
};

}  // namespace advq
