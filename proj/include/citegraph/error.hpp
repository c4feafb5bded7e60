#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace citegraph {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: shapes, ranges, malformed requests.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

/// Malformed file or wire payload (CGEM, CGRP, JSONL, bibliography).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A completion backend failed or was unreachable.
class CompletionError : public Error {
 public:
  using Error::Error;
};

/// Collects recoverable warnings from parsers and samplers.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  bool empty() const { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->warn(std::move(message));
}

}  // namespace citegraph
