#pragma once

#include <stdexcept>
#include <string>

namespace seqread {

// Iterative or numerical procedure that failed to reach its target.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data that cannot be processed (malformed files, impossible counts).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace seqread
