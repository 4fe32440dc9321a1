#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace elena {

// Stable error kinds. The numeric values are mirrored by elena_status in
// elena.h, so only append.
enum class ErrorCode : int {
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    UnknownLabel = 4,
    MissingField = 5,
    NoJsonFound = 6,
    UnrepairableJson = 7,
    UnmappedSourceLabel = 8,
    DuplicateRecordId = 9,
    MissingImage = 10,
    Schema = 11,
    AnnotationParse = 12,
    ModelLoad = 13,
    Inference = 14,
    AttachmentMissing = 15,
    FixtureLoad = 16,
    EmptyMatrix = 17,
    HeaderMismatch = 18,
    TruncatedFile = 19,
    ZeroMassGrid = 20,
    GeometryMismatch = 21,
    PairingMismatch = 22,
    MissingRun = 23,
    ConfigMismatch = 24,
    Write = 25,
    NoAgentMatched = 26,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace elena
