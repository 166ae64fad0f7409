#pragma once

#include <stdexcept>
#include <string>

namespace bexp {

// Root of every error raised by the library. Subclasses name the failure
// category so callers (and the CLI) can map them to diagnostics.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ProtocolError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class LabelError : public Error { using Error::Error; };
class DistributionError : public Error { using Error::Error; };
class ConfidenceTableError : public Error { using Error::Error; };
class DegenerateClassError : public Error { using Error::Error; };
class UnsupportedDatasetError : public Error { using Error::Error; };
class UndefinedMetricError : public Error { using Error::Error; };

} // namespace bexp
