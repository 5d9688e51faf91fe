#pragma once

#include <stdexcept>
#include <string>

namespace progip {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PROGIP_DEFINE_ERROR(Name)          \
    class Name : public Error {            \
    public:                                \
        using Error::Error;                \
    }

PROGIP_DEFINE_ERROR(DegenerateInput);
PROGIP_DEFINE_ERROR(InvalidPrefix);
PROGIP_DEFINE_ERROR(TooShort);
PROGIP_DEFINE_ERROR(ShapeMismatch);
PROGIP_DEFINE_ERROR(NonFiniteLoss);
PROGIP_DEFINE_ERROR(FormatError);
PROGIP_DEFINE_ERROR(NaNError);
PROGIP_DEFINE_ERROR(LengthMismatch);
PROGIP_DEFINE_ERROR(ProtocolError);
PROGIP_DEFINE_ERROR(IoError);

#undef PROGIP_DEFINE_ERROR

}  // namespace progip
