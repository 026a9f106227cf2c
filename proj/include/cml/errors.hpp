#pragma once

#include <stdexcept>
#include <string>

namespace cml {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank disagreement between tensors.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Malformed file content (tensor/checkpoint/embedding containers, netpbm images).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (bad flag combinations, out-of-range settings).
// The CLI maps this to exit code 2; everything else to 1.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A batch that cannot support the requested loss. The trainer resamples once
// before propagating.
class BatchError : public Error {
public:
    explicit BatchError(const std::string& msg) : Error(msg) {}
};

class NoTripletError : public BatchError {
public:
    explicit NoTripletError(const std::string& msg) : BatchError(msg) {}
};

class SingleClassBatchError : public BatchError {
public:
    explicit SingleClassBatchError(const std::string& msg) : BatchError(msg) {}
};

class DegenerateVarianceError : public BatchError {
public:
    explicit DegenerateVarianceError(const std::string& msg) : BatchError(msg) {}
};

class DegenerateBatchError : public Error {
public:
    explicit DegenerateBatchError(const std::string& msg) : Error(msg) {}
};

} // namespace cml
