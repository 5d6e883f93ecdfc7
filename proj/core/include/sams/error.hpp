#pragma once

#include <stdexcept>
#include <string>

namespace sams {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed inputs: bad files, bad config keys, contract violations at the boundary.
struct ValidationError : Error {
    using Error::Error;
};

// Shape or broadcasting mismatch in tensor operations.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values or other numerical failures detected mid-computation.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace sams
