#pragma once

#include <stdexcept>
#include <string>

namespace offlight {

// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ActionError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class IncompatibleError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), byte_offset_(byte_offset) {}
    std::size_t byte_offset() const { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

class DegenerateBatchError : public Error {
public:
    using Error::Error;
};

// Training diverged; carries the epoch or step index at which it happened.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long index) : Error(what), index_(index) {}
    long index() const { return index_; }

private:
    long index_;
};

// A pipeline stage failed; names the stage.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

}  // namespace offlight
