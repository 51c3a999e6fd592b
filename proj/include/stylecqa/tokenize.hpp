/// @file tokenize.hpp
/// @brief Whitespace+punctuation token estimation.
///
/// A token is a maximal run of ASCII letters/digits/underscore, a single
/// ASCII punctuation character, or a single non-ASCII code point (so CJK
/// text and emoji count one token per character). Whitespace separates
/// tokens and is never counted.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace stylecqa {

struct Token {
    std::string_view text;
    bool is_word;  // false for punctuation
};

std::vector<Token> tokenize(std::string_view text);

std::size_t estimate_tokens(std::string_view text);

/// Lower-cased word tokens (punctuation dropped), used as retrieval terms.
std::vector<std::string> index_terms(std::string_view text);

}  // namespace stylecqa
