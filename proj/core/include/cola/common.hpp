#pragma once

#include <stdexcept>
#include <string>

namespace cola {

// Error taxonomy shared across the library. CLI maps these onto exit codes.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape or dimension disagreement.
struct shape_error : error {
    using error::error;
};

// Violated operation precondition (non-scalar loss, empty context, bad label).
struct contract_error : error {
    using error::error;
};

// Bad configuration value or unknown key.
struct config_error : error {
    using error::error;
};

// Malformed file content.
struct parse_error : error {
    using error::error;
};

// NaN/Inf encountered where finite values are required.
struct numeric_error : error {
    using error::error;
};

}  // namespace cola
