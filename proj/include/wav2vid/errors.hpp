#pragma once

#include <stdexcept>
#include <string>

namespace w2v {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class MalformedHeader : public Error {
public:
    using Error::Error;
};

class TruncatedPayload : public Error {
public:
    using Error::Error;
};

/// Landmark configuration does not determine a rotation.
class EstimationFailure : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition (unnormalized symbols, frozen gradients, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

/// Reference signal carries no energy, so a normalized metric is undefined.
class UndefinedReference : public Error {
public:
    using Error::Error;
};

/// Generation requested without a cached video frame.
class MissingReference : public Error {
public:
    using Error::Error;
};

class FramingError : public Error {
public:
    using Error::Error;
};

class TrainingFailure : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace w2v
