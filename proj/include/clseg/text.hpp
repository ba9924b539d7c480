// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <string>
#include <vector>

namespace clseg {

// One normalization rule for the whole pipeline: lowercase, split on
// whitespace, detach terminal punctuation as its own token. Tokenizer,
// samplers and metrics all tokenize through here so n-gram statistics are
// reproducible bit-exactly.

inline bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

inline std::vector<std::string> normalize_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&]() {
        if (word.empty()) return;
        std::size_t end = word.size();
        while (end > 0 && is_terminal_punct(word[end - 1])) --end;
        if (end == 0) {
            // pure punctuation run: one token per character
            for (char c : word) out.emplace_back(1, c);
        } else {
            out.push_back(word.substr(0, end));
            for (std::size_t i = end; i < word.size(); ++i) out.emplace_back(1, word[i]);
        }
        word.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

inline std::string normalize_text(const std::string& text) {
    return join_tokens(normalize_tokens(text));
}

}  // namespace clseg
