#include "stylecqa/synthetic_backend.hpp"

#include <fmt/format.h>

namespace stylecqa {
namespace {

std::string_view section(std::string_view text, std::string_view header, std::string_view next) {
    auto start = text.find(header);
    if (start == std::string_view::npos) return {};
    start += header.size();
    auto end = next.empty() ? std::string_view::npos : text.find(next, start);
    auto out = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    const auto first = out.find_first_not_of(" \n");
    if (first == std::string_view::npos) return {};
    const auto last = out.find_last_not_of(" \n");
    return out.substr(first, last - first + 1);
}

std::string first_sentence(std::string_view text) {
    auto end = text.find_first_of(".!?\n");
    auto s = std::string(text.substr(0, end == std::string_view::npos ? text.size() : end + 1));
    if (s.size() > 240) s.resize(240);
    return s;
}

std::string leading_words(std::string_view text, std::size_t n) {
    std::string out;
    std::size_t words = 0;
    for (std::size_t i = 0; i < text.size() && words < n; ++i) {
        const char c = text[i];
        if (c == ' ' || c == '\n') {
            if (!out.empty() && out.back() != ' ') {
                out += ' ';
                ++words;
            }
        } else if (c != '.' && c != ',' && c != '?' && c != '!') {
            out += c;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

}  // namespace

MockBackend::Responder synthetic_responder(StandardRegistry registry, SyntheticOptions options) {
    return [registry = std::move(registry), options](const ChatRequest& req) -> std::optional<std::string> {
        const std::string& user = req.messages.back().content;
        const auto h = fnv1a64(fmt::format("{}|{}|{}", options.seed, req.tag, user));

        if (req.tag == "label") {
            const auto reply = section(user, "Author reply:\n", "");
            std::string out;
            for (const auto& s : registry.standards()) {
                const auto pick = fnv1a64(fmt::format("{}|{}|{}", options.seed, s.id, reply)) % s.labels.size();
                out += fmt::format("{}={}\n", s.id, s.labels[pick]);
            }
            return out;
        }
        if (req.tag == "cqa-forward") {
            const auto segment = section(user, "Article segment:\n", "\n\nWrite question-answer pairs.");
            return fmt::format("Q: What does the article say about {}?\nA: {}", leading_words(segment, 4),
                               first_sentence(segment));
        }
        if (req.tag == "roles") {
            const auto domain = section(user, "Account domain:", "\n");
            return fmt::format("1. A new reader curious about {}\n2. A long-time follower of {}\n"
                               "3. A practitioner working in {}",
                               domain, domain, domain);
        }
        if (req.tag == "questions") {
            const auto domain = section(user, "Account domain:", "\n");
            const auto role = section(user, "User role:", "\n");
            return fmt::format("What are the basics of {}?\nWhat changed recently in {}?\n"
                               "Which {} resources suit {}?",
                               domain, domain, domain, leading_words(role, 3));
        }
        if (req.tag == "answer") {
            const auto context = section(user, "Context:\n", "\n\nQuestion:");
            return fmt::format("According to the article, {}", first_sentence(context));
        }
        if (req.tag == "cqsa") {
            const auto original = section(user, "Original answer:\n", "\n\nTarget style labels:");
            const auto labels = section(user, "Target style labels:\n", "\n\nExample replies");
            std::string tags;
            std::size_t pos = 0;
            while (pos < labels.size()) {
                auto end = labels.find('\n', pos);
                auto line = labels.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
                if (auto colon = line.rfind(": "); colon != std::string_view::npos) {
                    if (!tags.empty()) tags += ' ';
                    tags += line.substr(colon + 2);
                }
                if (end == std::string_view::npos) break;
                pos = end + 1;
            }
            return fmt::format("{} [{}]", original, tags);
        }
        if (req.tag == "judge") {
            if (options.fixed_judgment) return *options.fixed_judgment;
            auto score = [&](int shift) { return 3.0 + 0.5 * static_cast<double>((h >> shift) % 5); };
            return fmt::format("C-A={};Q-A={};S-A={};F={}", score(0), score(8), score(16), score(24));
        }
        if (req.tag == "serve" || req.tag == "serve-baseline") {
            const auto question = section(user, "Question: ", "");
            return fmt::format("{} answer to: {}", req.adapter_id ? *req.adapter_id : std::string("base"),
                               question);
        }
        return std::nullopt;
    };
}

std::shared_ptr<MockBackend> synthetic_backend(StandardRegistry registry, SyntheticOptions options) {
    auto backend = std::make_shared<MockBackend>(std::map<std::string, std::string>{}, "ok");
    backend->set_latency_model(options.base_latency_ms, options.per_prompt_token_ms);
    backend->set_responder(synthetic_responder(std::move(registry), std::move(options)));
    return backend;
}

}  // namespace stylecqa
