#pragma once

#include <stdexcept>
#include <string>

namespace g2s {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// malformed user input (PENMAN, CoNLL-U, JSONL, corpus files)
struct ParseError : Error {
  ParseError(const std::string& msg, size_t offset)
      : Error(msg + " (offset " + std::to_string(offset) + ")"), offset(offset) {}
  explicit ParseError(const std::string& msg) : Error(msg), offset(0) {}
  size_t offset;
};

// well-formed input that violates a semantic rule
struct DataError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct VocabError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace g2s
