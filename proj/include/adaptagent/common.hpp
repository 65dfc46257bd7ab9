#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace adaptagent {

// Every failure surfaced by the library carries one of these codes. The
// names double as the machine-readable error strings used by the CLI and
// the recorder service.
enum class ErrorCode {
    TaskSiteMismatch,
    InvalidElement,
    InvalidOperation,
    AlreadyTerminated,
    NoPath,
    EmptyElementList,
    ViewportTooSmall,
    UnknownElement,
    EmptyBatch,
    ShapeMismatch,
    InsufficientTasks,
    NoPeerWebsite,
    MissingDemonstration,
    PreconditionFailed,
    ReplayFailure,
    NotEnoughDemos,
    ClientFailure,
    UnparseableResponse,
    EmptyInput,
    MissingLiveSignal,
    MalformedFile,
    IoFailure,
    SchemaMismatch,
    UnknownSite,
    UnknownTask,
    InvalidArgument,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    std::string_view name() const noexcept { return error_name(code_); }

private:
    ErrorCode code_;
};

enum class Tag { button, link, input, select, text };
enum class Operation { click, type, select };
enum class Modality { multimodal, text_only };

inline constexpr int kTagCount = 5;

std::string_view to_string(Tag tag);
std::string_view to_string(Operation op);
std::string_view to_string(Modality modality);
Tag parse_tag(std::string_view s);
// Case-insensitive; throws InvalidOperation on anything else.
Operation parse_operation(std::string_view s);
Modality parse_modality(std::string_view s);

inline bool operation_takes_value(Operation op) { return op != Operation::click; }

// Which operations a tag accepts. Text nodes accept CLICK as a no-op.
bool operation_allowed(Tag tag, Operation op);

}  // namespace adaptagent
