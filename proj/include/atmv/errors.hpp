// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace atmv {

// Shape / extent mismatch between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bad range, odd kernel extent, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward on a non-scalar, mutating a non-leaf, ...).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / stream problem. `offset` is the byte position where parsing failed,
// or -1 when it does not apply.
struct IoError : std::runtime_error {
    IoError(const std::string& msg, long long offset = -1)
        : std::runtime_error(offset >= 0 ? msg + " (at byte offset " + std::to_string(offset) + ")"
                                         : msg),
          offset(offset) {}
    long long offset;
};

// Checkpoint / config incompatibility (wrong version, mismatched dims, ...).
struct CompatError : std::runtime_error {
    explicit CompatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A runtime invariant was violated (non-finite values, broken contract).
struct InvariantError : std::runtime_error {
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace atmv
