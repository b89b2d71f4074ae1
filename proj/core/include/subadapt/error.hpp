#pragma once

#include <stdexcept>
#include <string>

namespace subadapt {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not conform for the requested operation.
struct DimError : Error {
    using Error::Error;
};

/// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

/// An index (class label, subject id, node id) is out of range.
struct IndexError : Error {
    using Error::Error;
};

/// A computation produced or encountered a non-finite value.
struct NumericError : Error {
    using Error::Error;
};

/// A serialized file has a bad magic number or unsupported version.
struct FormatError : Error {
    using Error::Error;
};

/// A serialized file ends before the declared payload is complete.
struct LengthError : Error {
    using Error::Error;
};

/// Stored content violates a declared invariant (ids out of range, non-finite data).
struct ValidationError : Error {
    using Error::Error;
};

/// A requested window or selection exceeds what the data provides.
struct RangeError : Error {
    using Error::Error;
};

/// Not enough samples are available to honor the request.
struct CapacityError : Error {
    using Error::Error;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace subadapt
