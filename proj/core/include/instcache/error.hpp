#pragma once

#include <stdexcept>
#include <string>

namespace instcache {

// Base for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user input: malformed files, invalid parameters, unknown config keys.
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(what) {}
};

// Misuse of a model state handle (released, unknown, or wrong model).
class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(what) {}
};

// I/O and wire-protocol failures (unreachable endpoint, broken pipe, bad frame).
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(what) {}
};

} // namespace instcache
