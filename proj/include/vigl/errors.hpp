#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vigl {

/// Operand shapes disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value (unknown tag, out-of-range hyperparameter).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A decoded-reward class has no members in the augmented batch.
class ClassStarvationError : public std::runtime_error {
 public:
  explicit ClassStarvationError(int reward_class)
      : std::runtime_error("decoded reward class " + std::to_string(reward_class) +
                           " has no augmented members"),
        reward_class_(reward_class) {}

  int reward_class() const noexcept { return reward_class_; }

 private:
  int reward_class_;
};

/// Training produced a non-finite loss.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vigl
