// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "clseg/errors.hpp"
#include "clseg/rng.hpp"
#include "clseg/text.hpp"

namespace clseg {

// A single sentence of a story. Tabs and newlines are reserved as field
// and record separators in the story file format.
struct Sentence {
    std::string text;

    static Sentence make(std::string s) {
        std::size_t b = s.find_first_not_of(" \t\r\n");
        std::size_t e = s.find_last_not_of(" \t\r\n");
        if (b == std::string::npos) throw DataError("empty sentence");
        std::string t = s.substr(b, e - b + 1);
        for (char c : t)
            if (c == '\t' || c == '\n' || c == '\r')
                throw DataError("sentence contains a reserved separator character");
        return Sentence{std::move(t)};
    }

    std::vector<std::string> tokens() const { return normalize_tokens(text); }
};

// Four context sentences plus one ending.
struct Story {
    std::string id;
    std::vector<Sentence> context;  // exactly 4
    Sentence ending;

    void validate() const {
        if (id.empty()) throw DataError("story id must be non-empty");
        if (context.size() != 4)
            throw DataError("story " + id + " has " + std::to_string(context.size()) +
                            " context sentences, expected 4");
    }
};

struct Corpus {
    std::vector<Story> stories;

    std::size_t size() const { return stories.size(); }

    void check_unique_ids() const {
        std::unordered_set<std::string> seen;
        for (const Story& s : stories)
            if (!seen.insert(s.id).second) throw DataError("duplicate story id: " + s.id);
    }
};

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t p = line.find(sep, start);
        if (p == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

// One story per line: id<TAB>s1<TAB>s2<TAB>s3<TAB>s4<TAB>s5, LF endings.
inline Corpus load_stories(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open story file: " + path);
    Corpus corpus;
    std::unordered_set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto fields = split_fields(line, '\t');
        if (fields.size() != 6)
            throw DataError("expected 6 fields, got " + std::to_string(fields.size()) + " at line " +
                            std::to_string(lineno));
        Story s;
        s.id = fields[0];
        if (s.id.empty()) throw DataError("empty story id at line " + std::to_string(lineno));
        if (!seen.insert(s.id).second) throw DataError("duplicate story id: " + s.id);
        for (int i = 1; i <= 4; ++i) s.context.push_back(Sentence::make(fields[i]));
        s.ending = Sentence::make(fields[5]);
        s.validate();
        corpus.stories.push_back(std::move(s));
    }
    return corpus;
}

inline void save_stories(const Corpus& corpus, std::ostream& out) {
    for (const Story& s : corpus.stories) {
        out << s.id;
        for (const Sentence& c : s.context) out << '\t' << c.text;
        out << '\t' << s.ending.text << '\n';
    }
}

struct SplitRatios {
    int train = 8;
    int dev = 1;
    int test = 1;
};

struct SplitResult {
    Corpus train, dev, test;
};

// Deterministic shuffled partition. Dev and test take the floored shares;
// train takes the remainder, which reproduces the published
// 78,530/9,816/9,816 sizes for a 98,162-story corpus at 8:1:1.
inline SplitResult split(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed) {
    if (corpus.stories.empty()) throw DataError("cannot split an empty corpus");
    if (ratios.train <= 0 || ratios.dev <= 0 || ratios.test <= 0)
        throw UsageError("split ratios must be positive");
    const std::size_t n = corpus.stories.size();
    const int total = ratios.train + ratios.dev + ratios.test;
    const std::size_t n_dev = n * static_cast<std::size_t>(ratios.dev) / total;
    const std::size_t n_test = n * static_cast<std::size_t>(ratios.test) / total;
    const std::size_t n_train = n - n_dev - n_test;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    SplitResult r;
    for (std::size_t i = 0; i < n; ++i) {
        const Story& s = corpus.stories[order[i]];
        if (i < n_train)
            r.train.stories.push_back(s);
        else if (i < n_train + n_dev)
            r.dev.stories.push_back(s);
        else
            r.test.stories.push_back(s);
    }
    return r;
}

}  // namespace clseg
