#pragma once

#include <stdexcept>
#include <string>

namespace peghole {

// Base class for all error conditions raised by the library.  Each concrete
// error corresponds to one contract violation the caller can act on.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// geom
struct DegenerateKeypoints : Error { using Error::Error; };
struct GimbalLock : Error { using Error::Error; };
struct InvalidSigma : Error { using Error::Error; };

// cloud
struct CountOutOfRange : Error { using Error::Error; };
struct EmptyCrop : Error { using Error::Error; };
struct EmptyCloud : Error { using Error::Error; };

// tensor / nets
struct ShapeMismatch : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct NonScalarOutput : Error { using Error::Error; };

// io
struct IoError : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };

// world / control
struct OutOfWorkspace : Error { using Error::Error; };
struct SamplingExhausted : Error { using Error::Error; };

// cli
struct UsageError : Error { using Error::Error; };

}  // namespace peghole
