/// @file synthetic_backend.hpp
/// @brief Deterministic stand-in for the chat model that understands every
/// pipeline prompt (by request tag) and emits well-formed output, so whole
/// pipeline runs work offline against MockBackend.

#pragma once

#include <cstdint>
#include <memory>

#include "stylecqa/llm_client.hpp"
#include "stylecqa/style_model.hpp"

namespace stylecqa {

struct SyntheticOptions {
    std::uint64_t seed = 0;
    double base_latency_ms = 1500.0;
    double per_prompt_token_ms = 2.0;
    /// When set, every judge call returns this line verbatim.
    std::optional<std::string> fixed_judgment;
};

MockBackend::Responder synthetic_responder(StandardRegistry registry, SyntheticOptions options);

std::shared_ptr<MockBackend> synthetic_backend(StandardRegistry registry, SyntheticOptions options = {});

}  // namespace stylecqa
