#pragma once

#include <stdexcept>
#include <string>

namespace gcn {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Spatial sizes that a convolution or pooling layer cannot realize exactly.
class GeometryError : public Error {
public:
  using Error::Error;
};

class LabelError : public Error {
public:
  using Error::Error;
};

/// Feature count or feature width disagrees with a FeatureSchema.
class SchemaError : public Error {
public:
  using Error::Error;
};

/// Malformed file. offset() is the byte position where parsing stopped.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

private:
  std::size_t offset_;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar node.
class ContractError : public Error {
public:
  using Error::Error;
};

}  // namespace gcn
