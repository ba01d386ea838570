#pragma once

#include <stdexcept>
#include <string>

namespace tracer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity showed up in a gradient or loss. The message names the
// offending parameter or training component.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: manifests, blobs, dataset files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tracer
