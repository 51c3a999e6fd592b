#include "stylecqa/tokenize.hpp"

namespace stylecqa {
namespace {

bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::size_t utf8_length(unsigned char lead) {
    if (lead >= 0xF0) return 4;
    if (lead >= 0xE0) return 3;
    if (lead >= 0xC0) return 2;
    return 1;  // stray continuation byte
}

// U+3000 ideographic space and U+00A0 are treated as whitespace.
bool is_unicode_space(std::string_view cp) {
    return cp == "\xE3\x80\x80" || cp == "\xC2\xA0";
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
        } else if (is_word_byte(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.push_back({text.substr(i, j - i), true});
            i = j;
        } else if (c < 0x80) {
            out.push_back({text.substr(i, 1), false});
            ++i;
        } else {
            std::size_t len = std::min(utf8_length(c), text.size() - i);
            auto cp = text.substr(i, len);
            if (!is_unicode_space(cp)) {
                out.push_back({cp, true});
            }
            i += len;
        }
    }
    return out;
}

std::size_t estimate_tokens(std::string_view text) {
    return tokenize(text).size();
}

std::vector<std::string> index_terms(std::string_view text) {
    std::vector<std::string> terms;
    for (const auto& tok : tokenize(text)) {
        if (!tok.is_word) continue;
        std::string term(tok.text);
        for (auto& ch : term) {
            if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        }
        terms.push_back(std::move(term));
    }
    return terms;
}

}  // namespace stylecqa
