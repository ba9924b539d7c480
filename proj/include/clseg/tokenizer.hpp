// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/text.hpp"

namespace clseg {

// Special ids sit below every ordinary token id. UNK is the first
// ordinary token: unknown words map to it instead of failing, so real
// story files can be ingested with a small vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kSentPos = 4;
inline constexpr int kSentNeg = 5;
inline constexpr int kUnk = 6;
inline constexpr int kNumSpecials = 6;
inline constexpr const char* kSpecialNames[7] = {"<pad>", "<bos>", "<eos>", "<sep>",
                                                 "<sent_pos>", "<sent_neg>", "<unk>"};

struct TokenSeq {
    std::vector<int> ids;

    bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

enum class SentimentTagKind { Positive, Negative };

class Tokenizer {
  public:
    Tokenizer() {
        for (int i = 0; i <= kUnk; ++i) add_token(kSpecialNames[i]);
    }

    // Frequency-capped word-level vocabulary: the most frequent normalized
    // tokens, ties broken lexicographically, on top of the 7 reserved ids.
    static Tokenizer build(const Corpus& corpus, int max_vocab) {
        if (corpus.stories.empty()) throw DataError("cannot build a tokenizer from an empty corpus");
        if (max_vocab < kUnk + 2) throw UsageError("max_vocab must be at least " + std::to_string(kUnk + 2));
        std::map<std::string, long long> freq;
        for (const Story& s : corpus.stories) {
            for (const Sentence& c : s.context)
                for (auto& t : c.tokens()) ++freq[t];
            for (auto& t : s.ending.tokens()) ++freq[t];
        }
        std::vector<std::pair<std::string, long long>> items(freq.begin(), freq.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Tokenizer tok;
        const std::size_t capacity = static_cast<std::size_t>(max_vocab) - (kUnk + 1);
        for (std::size_t i = 0; i < items.size() && i < capacity; ++i) tok.add_token(items[i].first);
        return tok;
    }

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }

    int token_id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool has_token(const std::string& token) const { return token_to_id_.count(token) > 0; }

    const std::string& token(int id) const {
        if (id < 0 || id >= vocab_size()) throw DataError("token id out of range: " + std::to_string(id));
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    TokenSeq encode(const std::string& text) const {
        TokenSeq seq;
        for (const std::string& t : normalize_tokens(text)) seq.ids.push_back(token_id(t));
        return seq;
    }

    std::string decode(const TokenSeq& seq) const {
        std::vector<std::string> toks;
        for (int id : seq.ids) toks.push_back(token(id));
        return join_tokens(toks);
    }

    // q = [BOS] (+ sentiment tag) + context tokens + [SEP]
    // y = ending tokens + [EOS]
    std::pair<TokenSeq, TokenSeq> encode_story(const Story& story,
                                               std::optional<SentimentTagKind> tag = std::nullopt) const {
        TokenSeq q;
        q.ids.push_back(kBos);
        if (tag) q.ids.push_back(*tag == SentimentTagKind::Positive ? kSentPos : kSentNeg);
        for (const Sentence& c : story.context)
            for (const std::string& t : c.tokens()) q.ids.push_back(token_id(t));
        q.ids.push_back(kSep);
        TokenSeq y = encode(story.ending.text);
        y.ids.push_back(kEos);
        return {q, y};
    }

    void save(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw DataError("cannot write vocab file: " + path);
            f << "CLSEG-VOCAB 1\n";
            for (int i = 0; i < vocab_size(); ++i) f << id_to_token_[static_cast<std::size_t>(i)] << '\t' << i << '\n';
        }
        std::remove(path.c_str());
        if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot finalize vocab file: " + path);
    }

    static Tokenizer load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open vocab file: " + path);
        std::string line;
        if (!std::getline(f, line) || line != "CLSEG-VOCAB 1")
            throw DataError("bad vocab file header in " + path);
        Tokenizer tok;
        tok.id_to_token_.clear();
        tok.token_to_id_.clear();
        int lineno = 1;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto fields = split_fields(line, '\t');
            if (fields.size() != 2)
                throw DataError("bad vocab line " + std::to_string(lineno) + " in " + path);
            const int id = std::stoi(fields[1]);
            if (id != tok.vocab_size())
                throw DataError("vocab ids out of order at line " + std::to_string(lineno) + " in " + path);
            tok.add_token(fields[0]);
        }
        for (int i = 0; i <= kUnk; ++i)
            if (i >= tok.vocab_size() || tok.id_to_token_[static_cast<std::size_t>(i)] != kSpecialNames[i])
                throw DataError("vocab file missing reserved token " + std::string(kSpecialNames[i]));
        return tok;
    }

  private:
    void add_token(const std::string& t) {
        token_to_id_.emplace(t, vocab_size());
        id_to_token_.push_back(t);
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace clseg
