#pragma once

#include <stdexcept>
#include <string>

namespace biasmeter {

// Three failure classes, one per CLI exit code (2, 3, 4).

/// Bad flags or arguments that violate an operation's preconditions.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Missing, malformed or inconsistent input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Divergence, non-finite values or a failed factorization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 2;
inline constexpr int data = 3;
inline constexpr int numerical = 4;
} // namespace exit_code

} // namespace biasmeter
