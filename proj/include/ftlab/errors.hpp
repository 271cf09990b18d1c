#pragma once

#include <stdexcept>
#include <string>

namespace ftlab {

/// Shape or precondition violation on a numeric operation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A training step produced a non-finite or diverged loss.
struct TrainError : std::runtime_error {
  int step = -1;
  int batch_index = -1;
  TrainError(const std::string& msg, int step_, int batch_index_ = -1)
      : std::runtime_error(msg), step(step_), batch_index(batch_index_) {}
};

/// Manifest / config rejected during validation. `field` is the offending path.
struct ValidationError : std::runtime_error {
  std::string field;
  ValidationError(const std::string& field_, const std::string& msg)
      : std::runtime_error(field_ + ": " + msg), field(field_) {}
};

/// IO failure on datasets, checkpoints or reports.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ftlab
