// errors.hpp - exception hierarchy shared by all fusedet modules.
#pragma once

#include <stdexcept>
#include <string>

namespace fusedet {

// Shape or dimension disagreement between operands. The message always
// names the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Input outside an operation's mathematical domain (log of a non-positive
// value, non-finite evaluation, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// A violated precondition or API contract (non-scalar backward output,
// level-count mismatch, N > M assignments, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed input text; the message carries the key or line number.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Scene synthesis could not satisfy its constraints.
class GenerationError : public std::runtime_error {
 public:
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

// No points survived cropping.
class EmptySceneError : public std::runtime_error {
 public:
  explicit EmptySceneError(const std::string& what) : std::runtime_error(what) {}
};

// File-system failures at the CLI boundary; message names the path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fusedet
