#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

// Base class for everything this library throws.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/layer shapes.
class shape_error : public error {
 public:
  using error::error;
};

// Numeric failures: division by exact zero, overflow to Inf/NaN in a forward op.
class arithmetic_error : public error {
 public:
  using error::error;
};

// Out-of-range axis, element index, or class label.
class index_error : public error {
 public:
  using error::error;
};

// Caller violated an API precondition (non-scalar loss, empty batch, ...).
class contract_error : public error {
 public:
  using error::error;
};

// Object is in the wrong state for the request (e.g. replaying a consumed tape).
class state_error : public error {
 public:
  using error::error;
};

// Anything wrong with input data or artifact files. CLI maps these to exit code 2.
class data_error : public error {
 public:
  using error::error;
};

// Malformed label CSV / manifest / namemap.
class format_error : public data_error {
 public:
  using data_error::data_error;
};

// A label row that is not exactly one-hot, or a duplicate id.
class label_error : public data_error {
 public:
  using data_error::data_error;
};

// A class too small to stratify.
class stratify_error : public data_error {
 public:
  using data_error::data_error;
};

// Image bytes that do not decode.
class decode_error : public data_error {
 public:
  using data_error::data_error;
};

// Checkpoint file failed its checksum or is truncated.
class corruption_error : public data_error {
 public:
  using data_error::data_error;
};

// Checkpoint entries do not line up with the model (unknown/missing/mismatched names).
class schema_error : public data_error {
 public:
  using data_error::data_error;
};

// Strict pretrained import left backbone parameters uncovered.
class import_error : public data_error {
 public:
  using data_error::data_error;
};

// Training produced a non-finite loss. CLI maps this to exit code 3.
class divergence_error : public error {
 public:
  using error::error;
};

}  // namespace orchard
