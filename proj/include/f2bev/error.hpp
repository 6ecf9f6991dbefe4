#pragma once

#include <stdexcept>
#include <string>

namespace f2bev {

// Base for every error raised by the library. Callers that only need to
// report a failure can catch this; specific types exist where a caller can
// reasonably recover.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A documented precondition of an operation was violated.
class PreconditionError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace f2bev
