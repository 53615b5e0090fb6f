#pragma once

#include <stdexcept>
#include <string>

namespace spnn {

// Error categories mirror the spnn_status codes of the C API so that
// exceptions thrown anywhere in the core map 1:1 onto library error codes.
enum class ErrorCategory {
    invalid_arg,
    config,
    io,
    format,
    shape,
    state,
    numeric,
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, const std::string& msg)
        : std::runtime_error(msg), category_(cat) {}

    ErrorCategory category() const { return category_; }

    static Error invalid_arg(const std::string& msg) { return {ErrorCategory::invalid_arg, msg}; }
    static Error config(const std::string& msg) { return {ErrorCategory::config, msg}; }
    static Error io(const std::string& msg) { return {ErrorCategory::io, msg}; }
    static Error format(const std::string& msg) { return {ErrorCategory::format, msg}; }
    static Error shape(const std::string& msg) { return {ErrorCategory::shape, msg}; }
    static Error state(const std::string& msg) { return {ErrorCategory::state, msg}; }
    static Error numeric(const std::string& msg) { return {ErrorCategory::numeric, msg}; }
    static Error internal(const std::string& msg) { return {ErrorCategory::internal, msg}; }

private:
    ErrorCategory category_;
};

const char* category_name(ErrorCategory cat);

}  // namespace spnn
