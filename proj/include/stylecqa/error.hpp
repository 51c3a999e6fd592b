/// @file error.hpp
/// @brief Error codes and the exception type shared by every module.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stylecqa {

enum class Errc {
    EmptyInput,
    RegistryMismatch,
    UnparsableLabel,
    UnknownCluster,
    SchemaVersionMismatch,
    CorruptDocument,
    BackendError,
    Timeout,
    UnknownAdapter,
    RateLimited,
    MalformedResponse,
    UnknownAccount,
    EmptyArticle,
    MalformedGeneration,
    EmptyExemplarPool,
    UnparsableJudgment,
    UnscoredInstance,
    NoTree,
    EmptyChosenSet,
    EmptyPairs,
    DigestMismatch,
    MissingSystem,
    EmptyRecords,
    ConfigError,
    StageInputMissing,
    IoError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, std::optional<int> retry_after_ms = std::nullopt)
        : std::runtime_error(message), code_(code), retry_after_ms_(retry_after_ms) {}

    Errc code() const noexcept { return code_; }
    /// Set for throttling failures surfaced to callers.
    std::optional<int> retry_after_ms() const noexcept { return retry_after_ms_; }

private:
    Errc code_;
    std::optional<int> retry_after_ms_;
};

}  // namespace stylecqa
