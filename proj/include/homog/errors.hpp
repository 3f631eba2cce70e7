#pragma once

#include <stdexcept>
#include <string>

namespace homog {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HOMOG_DEFINE_ERROR(Name)        \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

HOMOG_DEFINE_ERROR(InvalidArgument);
HOMOG_DEFINE_ERROR(HermitianViolation);
HOMOG_DEFINE_ERROR(SpectrumNegative);
HOMOG_DEFINE_ERROR(ResolutionError);
HOMOG_DEFINE_ERROR(GridMismatch);
HOMOG_DEFINE_ERROR(DivergentIntegral);
HOMOG_DEFINE_ERROR(DomainError);
HOMOG_DEFINE_ERROR(Overflow);
HOMOG_DEFINE_ERROR(TooLarge);
HOMOG_DEFINE_ERROR(SplitMismatch);
HOMOG_DEFINE_ERROR(KernelSingular);
HOMOG_DEFINE_ERROR(TooFewSamples);
HOMOG_DEFINE_ERROR(NonPositive);
HOMOG_DEFINE_ERROR(ConfigError);

#undef HOMOG_DEFINE_ERROR

}  // namespace homog
