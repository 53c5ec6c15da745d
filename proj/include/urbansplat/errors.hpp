// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace urbansplat {

/// Raised for malformed inputs: bad files, violated invariants, unknown ids.
/// The CLI maps this to exit code 2; every other exception maps to 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a computation cannot continue (e.g. a non-finite loss).
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace urbansplat
