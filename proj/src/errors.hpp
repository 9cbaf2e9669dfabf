#pragma once

#include <stdexcept>
#include <string>

namespace voxseed {

enum class ErrorCode {
    invalid_argument = 1,
    shape,
    index,
    no_surface,
    empty_mask,
    training_divergence,
    format,
    io,
    invalid_spec,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

#define VOXSEED_DEFINE_ERROR(Name, Code)                                       \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
    }

VOXSEED_DEFINE_ERROR(InvalidArgument, invalid_argument);
VOXSEED_DEFINE_ERROR(ShapeError, shape);
VOXSEED_DEFINE_ERROR(IndexError, index);
VOXSEED_DEFINE_ERROR(NoSurfaceError, no_surface);
VOXSEED_DEFINE_ERROR(EmptyMaskError, empty_mask);
VOXSEED_DEFINE_ERROR(TrainingDivergence, training_divergence);
VOXSEED_DEFINE_ERROR(FormatError, format);
VOXSEED_DEFINE_ERROR(IoError, io);
VOXSEED_DEFINE_ERROR(InvalidSpec, invalid_spec);

#undef VOXSEED_DEFINE_ERROR

}  // namespace voxseed
