#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dipa {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Raised when a masking request would leave some class with no active
// prototype.
class MaskExhaustedClass : public Error {
 public:
  explicit MaskExhaustedClass(int class_id)
      : Error("MaskExhaustedClass: masking would deactivate every prototype of class " +
              std::to_string(class_id)),
        class_id_(class_id) {}
  int class_id() const noexcept { return class_id_; }

 private:
  int class_id_;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// The verdict provider could not answer; the session can be resumed.
class ConsultUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace dipa
