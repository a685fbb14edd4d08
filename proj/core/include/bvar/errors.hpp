#pragma once

#include <stdexcept>
#include <string>

namespace bvar {

// Error taxonomy shared across the toolkit. The CLI maps these onto exit
// codes: input/dimension/contract errors exit 1, numeric and checkpoint
// errors exit 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or size mismatch between tensors / layers.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Bad user-supplied data: files, flags, labels, thresholds.
class InputError : public Error {
public:
    explicit InputError(const std::string& msg) : Error("input error: " + msg) {}
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

// Non-finite values, failed bisection, overflow.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Corrupt, truncated or incompatible checkpoint files.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error("checkpoint error: " + msg) {}
};

}  // namespace bvar
