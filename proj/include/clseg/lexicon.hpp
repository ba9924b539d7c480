// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/text.hpp"
#include "clseg/tokenizer.hpp"
#include "clseg/wordlists.hpp"

namespace clseg {

inline SentimentTagKind reverse(SentimentTagKind tag) {
    return tag == SentimentTagKind::Positive ? SentimentTagKind::Negative : SentimentTagKind::Positive;
}

inline int tag_value(SentimentTagKind tag) { return tag == SentimentTagKind::Positive ? 1 : 0; }

// Word-list sentiment model standing in for a trained classifier, plus the
// antonym table the counterfactual rewriter uses.
struct Lexicon {
    std::set<std::string> positive;
    std::set<std::string> negative;
    std::map<std::string, std::string> antonyms;  // stored in both directions
    std::set<std::string> negation;

    void add_antonym_pair(const std::string& a, const std::string& b) {
        antonyms[a] = b;
        antonyms[b] = a;
    }

    void validate() const {
        for (const auto& w : positive)
            if (negative.count(w)) throw DataError("lexicon word in both polarity lists: " + w);
        for (const auto& [a, b] : antonyms) {
            auto it = antonyms.find(b);
            if (it == antonyms.end() || it->second != a)
                throw DataError("antonym map is not an involution at: " + a);
        }
    }

    int polarity_of(const std::string& token) const {
        if (positive.count(token)) return 1;
        if (negative.count(token)) return -1;
        return 0;
    }

    // score = #positive - #negative hits, each hit flipped when a negation
    // word sits within the two preceding tokens. Ties are positive.
    SentimentTagKind classify(const std::vector<std::string>& tokens) const {
        int score = 0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            int pol = polarity_of(tokens[i]);
            if (pol == 0) continue;
            for (std::size_t back = 1; back <= 2 && back <= i; ++back) {
                if (negation.count(tokens[i - back])) {
                    pol = -pol;
                    break;
                }
            }
            score += pol;
        }
        return score >= 0 ? SentimentTagKind::Positive : SentimentTagKind::Negative;
    }

    SentimentTagKind classify(const Sentence& s) const { return classify(s.tokens()); }

    SentimentTagKind classify(const std::vector<Sentence>& sentences) const {
        std::vector<std::string> tokens;
        for (const Sentence& s : sentences)
            for (auto& t : s.tokens()) tokens.push_back(std::move(t));
        return classify(tokens);
    }

    void save(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw DataError("cannot write lexicon file: " + path);
            f << "[positive]\n";
            for (const auto& w : positive) f << w << '\n';
            f << "[negative]\n";
            for (const auto& w : negative) f << w << '\n';
            f << "[antonyms]\n";
            for (const auto& [a, b] : antonyms)
                if (a < b) f << a << '\t' << b << '\n';
            f << "[negation]\n";
            for (const auto& w : negation) f << w << '\n';
        }
        std::remove(path.c_str());
        if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot finalize lexicon file: " + path);
    }

    static Lexicon load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open lexicon file: " + path);
        Lexicon lex;
        std::string line, section;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (line.front() == '[') {
                section = line;
                continue;
            }
            if (section == "[positive]") {
                lex.positive.insert(line);
            } else if (section == "[negative]") {
                lex.negative.insert(line);
            } else if (section == "[antonyms]") {
                auto fields = split_fields(line, '\t');
                if (fields.size() != 2)
                    throw DataError("bad antonym line " + std::to_string(lineno) + " in " + path);
                lex.add_antonym_pair(fields[0], fields[1]);
            } else if (section == "[negation]") {
                lex.negation.insert(line);
            } else {
                throw DataError("lexicon line outside a known section at line " + std::to_string(lineno));
            }
        }
        lex.validate();
        return lex;
    }
};

inline Lexicon default_lexicon() {
    Lexicon lex;
    for (auto& row : words::kContextMoods[1]) lex.positive.insert(std::string(row));
    for (auto& row : words::kContextMoods[0]) lex.negative.insert(std::string(row));
    for (auto& row : words::kEndingMoods[1]) lex.positive.insert(std::string(row));
    for (auto& row : words::kEndingMoods[0]) lex.negative.insert(std::string(row));
    lex.positive.insert("happy");
    lex.negative.insert("sad");
    for (auto w : words::kExtraPositive) lex.positive.insert(std::string(w));
    for (auto w : words::kExtraNegative) lex.negative.insert(std::string(w));
    for (auto& pair : words::kMoodAntonyms) lex.add_antonym_pair(std::string(pair[0]), std::string(pair[1]));
    for (const auto& chain : words::kChains)
        for (const auto& step : chain.steps)
            lex.add_antonym_pair(std::string(step.object_a), std::string(step.object_b));
    for (auto w : words::kNegation) lex.negation.insert(std::string(w));
    lex.validate();
    return lex;
}

}  // namespace clseg
