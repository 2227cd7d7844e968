#pragma once

#include <stdexcept>
#include <string>

namespace pedpipe {

/// Base class for every error raised by the toolkit. `kind()` is a short
/// machine-readable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ParseError : Error {
    explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

struct InvariantError : Error {
    explicit InvariantError(const std::string& what) : Error("invariant_violation", what) {}
};

struct EmptyResultError : Error {
    explicit EmptyResultError(const std::string& what) : Error("empty_result", what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("shape_mismatch", what) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& what) : Error("out_of_range", what) {}
};

struct SamplingExhaustedError : Error {
    explicit SamplingExhaustedError(const std::string& what) : Error("sampling_exhausted", what) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& what) : Error("divergence", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io_error", what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("corrupt_payload", what) {}
};

}  // namespace pedpipe
