#pragma once

#include <stdexcept>
#include <string>

namespace mrc {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Backward requested for a tensor that is not recorded on the tape.
class GraphError : public Error {
 public:
  using Error::Error;
};

// A softmax row or pooling window with no unmasked entries.
class MaskError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Dataset violates its schema or internal consistency.
class DataError : public Error {
 public:
  using Error::Error;
};

// Gold index outside the option set.
class LabelError : public Error {
 public:
  using Error::Error;
};

// Token id outside the embedding table.
class VocabError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Sequence cannot be packed into the requested length.
class EncodingError : public Error {
 public:
  using Error::Error;
};

// Context/question-answer split produced an empty side.
class SplitError : public Error {
 public:
  using Error::Error;
};

// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrc
