#pragma once

#include <stdexcept>
#include <string>

namespace orthograd {

// Raised on violated preconditions: dimension mismatches, non-finite values,
// out-of-range hyperparameters.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed text input (config, CSV, results, checkpoint headers).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

}  // namespace detail
}  // namespace orthograd
