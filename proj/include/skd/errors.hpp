#pragma once

#include <stdexcept>
#include <string>

namespace skd {

/// Base of every error raised by the framework. The CLI maps subclasses
/// onto process exit codes (see exit_code_for).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: unknown keys, unsupported variants, bad ranges.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape contract violated (tap mismatch, indivisible input, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptImageError : public DataError {
 public:
  using DataError::DataError;
};

/// Images and labels disagree in count, or a split does not have the
/// declared size.
class LabelCountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class InvalidLabelError : public DataError {
 public:
  using DataError::DataError;
};

/// A metric is undefined for its input (e.g. every pixel ignored).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Record store or checkpoint content does not match what it claims to be.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Process exit codes used by the `skd` CLI.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitIntegrity = 4,
};

/// Config and shape-contract errors are caller mistakes (2); data problems
/// are 3; integrity violations 4; anything else 1.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const IntegrityError*>(&e)) return kExitIntegrity;
  return kExitFailure;
}

}  // namespace skd
