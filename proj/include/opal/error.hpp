#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace opal {

// Base for every error the library raises. `code()` is a short stable token
// used by the CLI for its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Malformed JSON text. `position` is the byte offset reported by the tokenizer.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& what)
      : Error("syntax_error", what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Well-formed JSON that does not fit the GKPO schema (unknown key, wrong type,
// out-of-enum value, missing required key). `path` is a dotted field path.
class SchemaError : public Error {
 public:
  SchemaError(std::string kind, std::string path, const std::string& what)
      : Error(std::move(kind), what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Numeric or semantic precondition failure (missing sample name, bce outside
// (0,1), degenerate probe input, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain_error", what) {}
  DomainError(std::string code, const std::string& what) : Error(std::move(code), what) {}
};

}  // namespace opal
