#pragma once

#include <stdexcept>
#include <string>

namespace splitquant {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad caller-supplied argument (empty input, out-of-range knob).
class ArgumentError : public Error {
  public:
    using Error::Error;
};

/// Shape or bounds violation inside a tensor kernel.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Graph-level failure. `node()` names the offending layer when known.
class GraphError : public Error {
  public:
    GraphError(std::string node, const std::string &what)
        : Error(node.empty() ? what : "node '" + node + "': " + what), node_(std::move(node)) {}

    const std::string &node() const noexcept { return node_; }

  private:
    std::string node_;
};

/// A layer of the wrong kind was passed to a kind-specific rewrite.
class KindError : public GraphError {
  public:
    using GraphError::GraphError;
};

class CalibrationError : public Error {
  public:
    using Error::Error;
};

/// Non-finite values produced by a numeric pipeline.
class NumericError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    IoError(std::string path, const std::string &what)
        : Error(path + ": " + what), path_(std::move(path)) {}

    const std::string &path() const noexcept { return path_; }

  private:
    std::string path_;
};

// Model/dataset file format failures.
class FormatError : public Error {
  public:
    using Error::Error;
};

class ManifestParseError : public FormatError {
  public:
    using FormatError::FormatError;
};

class TensorBoundsError : public FormatError {
  public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
  public:
    using FormatError::FormatError;
};

class UnsupportedKindError : public FormatError {
  public:
    explicit UnsupportedKindError(std::string kind)
        : FormatError("unsupported layer kind '" + kind + "'"), kind_(std::move(kind)) {}

    const std::string &kind() const noexcept { return kind_; }

  private:
    std::string kind_;
};

}  // namespace splitquant
