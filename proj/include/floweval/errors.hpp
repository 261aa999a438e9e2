#pragma once

#include <stdexcept>
#include <string>

namespace floweval {

// Thrown when an input file or line cannot be decoded at all.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when decoded data violates a domain invariant (unknown act label,
// duplicate id, empty corpus, dimension mismatch, ...).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace floweval
