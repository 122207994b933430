#pragma once

#include <stdexcept>
#include <string>

namespace slidepipe {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration / argument validation.
struct ConfigError : Error {
    using Error::Error;
};

// Geometry and buffer shape disagreements.
struct ShapeMismatch : Error {
    using Error::Error;
};
struct IndexOutOfRange : Error {
    using Error::Error;
};
struct NonFiniteInput : Error {
    using Error::Error;
};

// Filename codec failures.
struct UnrecognizedConvention : Error {
    using Error::Error;
};
struct MalformedCoordinate : Error {
    using Error::Error;
};

// Stitch accumulator feed contract violations.
struct OutOfBand : Error {
    using Error::Error;
};
struct OutOfExtent : Error {
    using Error::Error;
};

// Patch reassembly.
struct MixedSlide : Error {
    using Error::Error;
};
struct MissingTarget : Error {
    using Error::Error;
};

// Evaluation.
struct UnitSetMismatch : Error {
    using Error::Error;
};
struct UnknownSlide : Error {
    using Error::Error;
};

// Raster I/O.
struct UnsupportedFormat : Error {
    using Error::Error;
};
struct CorruptFile : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// Synthetic slide generation.
struct InfeasibleSpec : Error {
    using Error::Error;
};

// External predictor protocol.
struct ProtocolError : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct RemoteError : Error {
    using Error::Error;
};
struct TimeoutError : Error {
    using Error::Error;
};

}  // namespace slidepipe
