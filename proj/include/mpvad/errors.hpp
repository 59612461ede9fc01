#pragma once

#include <stdexcept>
#include <string>

namespace mpvad {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// File missing, unreadable or unwritable.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Malformed container, unsupported encoding, truncated or corrupt data.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Dimension or shape mismatch between operands.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Streaming lookup of a window that has not completed yet.
struct NotReadyError : Error {
    explicit NotReadyError(const std::string& msg) : Error(msg) {}
};

}  // namespace mpvad
