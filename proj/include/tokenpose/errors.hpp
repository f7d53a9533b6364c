#ifndef TOKENPOSE_ERRORS_HPP
#define TOKENPOSE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tokenpose {

// Stable error categories; the C API maps these 1:1 onto tkp_status codes.
enum class ErrorCode : int {
  invalid_argument = 1,
  shape_mismatch = 2,
  parse = 3,
  io = 4,
  incompatible_checkpoint = 5,
  runtime = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(ErrorCode::shape_mismatch, msg) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct NotScalar : Error {
  explicit NotScalar(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct InvalidStride : Error {
  explicit InvalidStride(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct NonDivisiblePatch : Error {
  explicit NonDivisiblePatch(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct IndivisibleHeads : Error {
  explicit IndivisibleHeads(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct InvalidLayerIndex : Error {
  explicit InvalidLayerIndex(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct NoVisibleKeypoints : Error {
  explicit NoVisibleKeypoints(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct EmptyEvalSet : Error {
  explicit EmptyEvalSet(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct MissingHeadSize : Error {
  explicit MissingHeadSize(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct TemplateInvalid : Error {
  explicit TemplateInvalid(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct DegenerateBox : Error {
  explicit DegenerateBox(const std::string& msg) : Error(ErrorCode::invalid_argument, msg) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error(ErrorCode::parse, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorCode::io, msg) {}
};

struct IncompatibleCheckpoint : Error {
  explicit IncompatibleCheckpoint(const std::string& msg)
      : Error(ErrorCode::incompatible_checkpoint, msg) {}
};

}  // namespace tokenpose

#endif
