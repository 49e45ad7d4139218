#pragma once

#include <stdexcept>
#include <string>

namespace abtok {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input file does not match the expected column schema.
struct schema_error : error {
    using error::error;
};

// Malformed model/vocab file. byte_offset points at the first bad byte.
struct parse_error : error {
    parse_error(const std::string& msg, std::size_t byte_offset)
        : error(msg + " (byte " + std::to_string(byte_offset) + ")"), offset(byte_offset) {}
    std::size_t offset;
};

struct argument_error : error {
    using error::error;
};

// Bad dataset content (unknown class label, empty corpus, ...).
struct data_error : error {
    using error::error;
};

struct train_error : error {
    using error::error;
};

// Encoded sequence would exceed max_positions.
struct length_error : error {
    using error::error;
};

struct metric_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

}  // namespace abtok
