#pragma once

#include <stdexcept>
#include <string>

namespace malthus {

/// Base class for every error raised by the library. Each subclass maps to one
/// failure class of the public operations.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidModel : public Error {
public:
    using Error::Error;
};

class NonPositiveH : public Error {
public:
    using Error::Error;
};

class IntegrationFailure : public Error {
public:
    using Error::Error;
};

class OffOrbit : public Error {
public:
    using Error::Error;
};

class OffDomain : public Error {
public:
    using Error::Error;
};

class TailBoundExceeded : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

class BracketFailure : public Error {
public:
    using Error::Error;
};

class PopulationCapExceeded : public Error {
public:
    using Error::Error;
};

class DegenerateData : public Error {
public:
    using Error::Error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace malthus
