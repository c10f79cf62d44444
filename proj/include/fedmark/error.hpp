#pragma once

#include <stdexcept>
#include <string>

namespace fedmark {

// Base for every error raised by the library. Subclasses name the failure
// category so callers (and tests) can distinguish them.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FEDMARK_DEFINE_ERROR(Name)            \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    }

FEDMARK_DEFINE_ERROR(ShapeError);
FEDMARK_DEFINE_ERROR(DegenerateInputError);
FEDMARK_DEFINE_ERROR(ConfigError);
FEDMARK_DEFINE_ERROR(ModalityError);
FEDMARK_DEFINE_ERROR(CountError);
FEDMARK_DEFINE_ERROR(DataError);
FEDMARK_DEFINE_ERROR(MappingError);
FEDMARK_DEFINE_ERROR(ParameterError);
FEDMARK_DEFINE_ERROR(FoldError);
FEDMARK_DEFINE_ERROR(ConnectivityError);
FEDMARK_DEFINE_ERROR(UndefinedStatisticError);

#undef FEDMARK_DEFINE_ERROR

}  // namespace fedmark
