#pragma once

#include <stdexcept>
#include <string>

namespace scsr {

// Error taxonomy shared by the whole library. Each failure mode named in a
// module contract maps to exactly one kind, so callers (and the CLI exit-code
// mapping) can dispatch on it.
enum class ErrorKind {
    bounds,            // index / order / id out of range
    shape,             // vector or matrix length mismatch
    insufficient_data, // too few subjects / samples for the operation
    config,            // invalid or inconsistent configuration
    split,             // cohort split cannot honor the requested fractions
    degenerate_mask,   // mask would leave no usable predictors or targets
    numeric,           // non-finite values encountered
    convergence,       // iterative fit did not reach tolerance
    undefined_metric,  // metric undefined for the given inputs
    io_open,           // file cannot be opened
    io_magic,          // wrong magic bytes
    io_version,        // unsupported format version
    io_truncated,      // payload shorter than header declares
    io_inconsistent,   // header-declared sizes disagree with payload
    io_parse,          // malformed text/JSON content
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::bounds: return "bounds";
        case ErrorKind::shape: return "shape";
        case ErrorKind::insufficient_data: return "insufficient-data";
        case ErrorKind::config: return "config";
        case ErrorKind::split: return "split";
        case ErrorKind::degenerate_mask: return "degenerate-mask";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::convergence: return "convergence";
        case ErrorKind::undefined_metric: return "undefined-metric";
        case ErrorKind::io_open: return "io-open";
        case ErrorKind::io_magic: return "io-magic";
        case ErrorKind::io_version: return "io-version";
        case ErrorKind::io_truncated: return "io-truncated";
        case ErrorKind::io_inconsistent: return "io-inconsistent";
        case ErrorKind::io_parse: return "io-parse";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

} // namespace scsr
