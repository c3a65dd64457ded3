#pragma once

#include <stdexcept>
#include <string>

namespace mvlab {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidParamsError : Error { using Error::Error; };
struct NonPositiveEpsError : Error { using Error::Error; };
struct TimeOutOfRangeError : Error { using Error::Error; };
struct MassExplosionError : Error { using Error::Error; };
struct NegativeInputError : Error { using Error::Error; };
struct NonConvergenceError : Error { using Error::Error; };
struct UnboundedIntegrandError : Error { using Error::Error; };
struct NotAMartingaleError : Error { using Error::Error; };
struct TooFewReplicatesError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace mvlab
