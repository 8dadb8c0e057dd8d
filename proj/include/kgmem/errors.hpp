#pragma once

#include <stdexcept>
#include <string>

namespace kgmem {

// Invalid world/trainer/experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (length mismatch, finished episode, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Unknown entity/relation or vocabulary mismatch against a checkpoint.
class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file (checkpoint, log, trace).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kgmem
