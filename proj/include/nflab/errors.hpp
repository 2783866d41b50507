#pragma once

#include <stdexcept>
#include <string>

namespace nflab {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not match an operation's contract. The message names
// the operation, the offending operand and the expected shape.
struct ShapeError : Error {
    using Error::Error;
};

// Bad argument values (out-of-range token ids, invalid flags, ...).
struct ValueError : Error {
    using Error::Error;
};

// Config file / --set parse and validation failures. `line` is 0 when the
// error is not tied to a particular config line.
struct ConfigError : Error {
    int line = 0;
    explicit ConfigError(const std::string& msg, int line_no = 0)
        : Error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
          line(line_no) {}
};

// Filesystem-level failures (missing corpus, unwritable output dir, ...).
struct IoError : Error {
    using Error::Error;
};

}  // namespace nflab
