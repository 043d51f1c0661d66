#ifndef SPLATEDIT_COMMON_HPP
#define SPLATEDIT_COMMON_HPP

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace splatedit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or unsupported file content (bad header, missing field, wrong magic).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure (missing file, unwritable path, short read).
class IoError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation precondition (bad sizes, empty inputs, invalid flag).
class InputError : public Error {
public:
    using Error::Error;
};

/// Geometry too degenerate to proceed (coincident camera centers, collapsed
/// point cloud, zero epipolar line).
class DegeneracyError : public Error {
public:
    using Error::Error;
};

/// Numeric breakdown at runtime (NaN gradients, diverged loss).
class NumericError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage failed; message names the stage and, where relevant, the
/// iteration index.
class PipelineError : public Error {
public:
    using Error::Error;
};

} // namespace splatedit

#endif
