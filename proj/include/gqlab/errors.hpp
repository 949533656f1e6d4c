#pragma once

#include <stdexcept>
#include <string>

namespace gqlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GQLAB_DEFINE_ERROR(Name)            \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

GQLAB_DEFINE_ERROR(InvalidArgument);
GQLAB_DEFINE_ERROR(DimensionMismatch);
GQLAB_DEFINE_ERROR(NonFiniteValue);
GQLAB_DEFINE_ERROR(SingularMatrix);
GQLAB_DEFINE_ERROR(NotSymmetric);
GQLAB_DEFINE_ERROR(NoConvergence);
GQLAB_DEFINE_ERROR(InvalidModel);
GQLAB_DEFINE_ERROR(MissingNextAction);
GQLAB_DEFINE_ERROR(NonFiniteUpdate);
GQLAB_DEFINE_ERROR(MissingExtremes);
GQLAB_DEFINE_ERROR(InsufficientRuns);
GQLAB_DEFINE_ERROR(ConfigError);
GQLAB_DEFINE_ERROR(IoError);

#undef GQLAB_DEFINE_ERROR

}  // namespace gqlab
