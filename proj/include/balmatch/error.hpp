#pragma once

#include <stdexcept>
#include <string>

namespace balmatch {

/// Raised for malformed input: bad files, inconsistent specs, out-of-range
/// arguments. The CLI maps it to exit status 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline ValidationError row_error(std::size_t row, const std::string& what) {
    return ValidationError("row " + std::to_string(row) + ": " + what);
}

}  // namespace balmatch
