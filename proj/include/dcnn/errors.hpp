#pragma once

#include <stdexcept>

namespace dcnn {

// Base class for every error the library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct OddDimension : Error { using Error::Error; };
struct InvalidRate : Error { using Error::Error; };
struct InvalidLabel : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct InvalidSplit : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct AlreadyNormalized : Error { using Error::Error; };

// File ingestion and model-file errors.
struct IoError : Error { using Error::Error; };
struct HeaderError : Error { using Error::Error; };
struct ValueError : Error { using Error::Error; };
struct LabelError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ChecksumError : Error { using Error::Error; };

} // namespace dcnn
