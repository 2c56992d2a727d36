#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace rff {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// invalid arguments / state -> 1, file format / parse -> 2, numeric -> 3.

struct InvalidArgument : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidState : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed binary file (bad magic, version, truncation, ...).
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, uint64_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    uint64_t offset;
};

// Malformed text input (CSV rows, config files).
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, size_t line_number)
        : std::runtime_error(msg + " (line " + std::to_string(line_number) + ")"),
          line(line_number) {}
    size_t line;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A gallery reference whose mean embedding collapsed to (near) zero norm.
struct DegenerateReference : NumericError {
    using NumericError::NumericError;
};

}  // namespace rff
