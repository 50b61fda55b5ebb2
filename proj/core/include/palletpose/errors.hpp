#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace palletpose {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A 3D point has non-positive depth in the camera frame.
class BehindCamera : public Error {
 public:
  using Error::Error;
};

/// Two poses with incompatible frame ids were combined.
class FrameMismatch : public Error {
 public:
  using Error::Error;
};

/// Fewer correspondences than the solver minimum.
class TooFewPoints : public Error {
 public:
  using Error::Error;
};

/// Input geometry is rank-deficient (collinear points, singular normal equations).
class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

/// Pose refinement ended with the object centroid at non-positive depth.
class DivergedBehindCamera : public Error {
 public:
  using Error::Error;
};

/// Scene sampling could not satisfy the visibility constraints.
class SceneRejection : public Error {
 public:
  using Error::Error;
};

/// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error(message + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Trajectory timestamps are not strictly increasing.
class NonMonotonicTimestamps : public Error {
 public:
  using Error::Error;
};

/// Too few samples for the requested statistic.
class TooFewSamples : public Error {
 public:
  using Error::Error;
};

}  // namespace palletpose
