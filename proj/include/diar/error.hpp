#pragma once

#include <stdexcept>
#include <string>

namespace diar {

// Error categories; the CLI maps these to process exit codes.
enum class errc {
    io_error,            // unreadable / unwritable file
    unsupported_format,  // recognized container, unsupported encoding
    truncated_data,      // file shorter than its headers claim
    parse_error,         // malformed text input (RTTM, manifest)
    validation,          // violated precondition or domain invariant
    shape_mismatch,      // tensor / matrix dimension disagreement
    checksum_mismatch,   // checkpoint corruption
    version_mismatch,    // checkpoint from an incompatible format version
    numeric_error,       // NaN / Inf where finite values are required
};

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    errc code() const { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& msg) {
    throw Error(code, msg);
}

} // namespace diar
