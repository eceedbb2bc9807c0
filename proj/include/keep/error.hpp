#pragma once

#include <stdexcept>
#include <string>

namespace keep {

enum class ErrorCode {
  kShape = 1,
  kState,
  kNumeric,
  kConfig,
  kIo,
  kProtocol,
  kManifest,
  kVersion,
  kInvalidArgument,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define KEEP_DEFINE_ERROR(Name, Code)                                 \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(Code, what) {}     \
  }

KEEP_DEFINE_ERROR(ShapeError, ErrorCode::kShape);
KEEP_DEFINE_ERROR(StateError, ErrorCode::kState);
KEEP_DEFINE_ERROR(NumericError, ErrorCode::kNumeric);
KEEP_DEFINE_ERROR(ConfigError, ErrorCode::kConfig);
KEEP_DEFINE_ERROR(IoError, ErrorCode::kIo);
KEEP_DEFINE_ERROR(ProtocolError, ErrorCode::kProtocol);
KEEP_DEFINE_ERROR(ManifestError, ErrorCode::kManifest);
KEEP_DEFINE_ERROR(VersionError, ErrorCode::kVersion);
KEEP_DEFINE_ERROR(InvalidArgument, ErrorCode::kInvalidArgument);

#undef KEEP_DEFINE_ERROR

}  // namespace keep
