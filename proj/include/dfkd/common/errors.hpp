#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfkd {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/batch shape disagreement.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Invalid configuration (bad distribution, unknown key, broken constraint).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Violated API precondition (e.g. querying statistics that were never captured).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

/// Malformed on-disk data; carries the byte offset of the first bad byte.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::size_t byte_offset;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

/// Training produced a non-finite loss; carries the trace so far, serialized.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, std::string trace)
        : Error(msg), trace_json(std::move(trace)) {}
    std::string trace_json;
};

/// Metric is undefined for the given inputs (e.g. relative accuracy with zero teacher accuracy).
class UndefinedMetricError : public Error {
public:
    explicit UndefinedMetricError(const std::string& msg) : Error(msg) {}
};

}  // namespace dfkd
