// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/lexicon.hpp"
#include "clseg/rng.hpp"
#include "clseg/wordlists.hpp"

namespace clseg {

// Machine-checkable labels for one generated story. chain packs the
// activity theme, the object-set variant and the window start into one
// id ((theme * 2 + variant) * 8 + start), so the expected ending object is
// recoverable from the label alone.
struct StoryMeta {
    std::string id;
    int chain = 0;    // 0..63
    int trigger = 0;  // connective index of the fourth sentence, 0..3
    bool positive = true;

    int theme() const { return chain / 16; }
    int variant() const { return (chain / 8) % 2; }
    int start() const { return chain % 8; }

    const words::ChainStep& step(int offset) const {
        return words::kChains[static_cast<std::size_t>(theme())]
            .steps[static_cast<std::size_t>((start() + offset) % 8)];
    }

    std::string object(int offset) const {
        const words::ChainStep& s = step(offset);
        return std::string(variant() == 0 ? s.object_a : s.object_b);
    }

    std::string expected_ending_object() const { return object(3); }
};

struct SynthConfig {
    // fraction of stories whose mood sentence uses the negated antonym
    // form ("felt not gloomy" for a positive story)
    double negation_rate = 0.25;
};

struct SynthResult {
    Corpus corpus;
    std::vector<StoryMeta> meta;
};

// Templated five-sentence stories. Each story shows four consecutive
// steps of an activity cycle, every sentence opens with an independently
// drawn connective, the second sentence carries the single mood cue, and
// the ending repeats the fourth event's object with a polarity word
// determined by the mood polarity and the final connective.
inline SynthResult synth_corpus(const SynthConfig& cfg, int n_stories, std::uint64_t seed) {
    if (n_stories < 1) throw UsageError("n_stories must be at least 1");
    Rng rng(seed);
    SynthResult out;
    char idbuf[32];
    for (int i = 0; i < n_stories; ++i) {
        StoryMeta m;
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06d", i + 1);
        m.id = idbuf;
        const int theme = rng.next_int(0, static_cast<int>(words::kChains.size()) - 1);
        const int variant = rng.next_int(0, 1);
        const int start = rng.next_int(0, 7);
        m.chain = (theme * 2 + variant) * 8 + start;
        m.positive = rng.next_int(0, 1) == 1;

        const std::string name(words::kNames[static_cast<std::size_t>(rng.next_int(0, 9))]);
        const std::string day(words::kDays[static_cast<std::size_t>(rng.next_int(0, 6))]);
        int conn[4];
        for (int k = 0; k < 4; ++k) conn[k] = rng.next_int(0, 3);
        m.trigger = conn[3];
        auto connective = [&](int k) { return std::string(words::kTriggers[static_cast<std::size_t>(conn[k])]); };
        auto verb = [&](int offset) { return std::string(m.step(offset).verb); };

        const int pol = m.positive ? 1 : 0;
        const std::string mood(words::kContextMoods[static_cast<std::size_t>(pol)]
                                                   [static_cast<std::size_t>(rng.next_int(0, 3))]);
        const bool negated = rng.next_real() < cfg.negation_rate;
        std::string mood_phrase = mood;
        if (negated) {
            const std::string opposite(
                words::kContextMoods[static_cast<std::size_t>(1 - pol)]
                                    [static_cast<std::size_t>(rng.next_int(0, 3))]);
            mood_phrase = "not " + opposite;
        }
        const std::string polar(
            words::kEndingMoods[static_cast<std::size_t>(pol)][static_cast<std::size_t>(m.trigger)]);
        const std::string end_verb(words::kEndingVerbs[static_cast<std::size_t>(m.trigger)]);
        const std::string end_prep(words::kEndingPreps[static_cast<std::size_t>(m.trigger)]);

        Story s;
        s.id = m.id;
        s.context.push_back(
            Sentence::make(connective(0) + " " + name + " " + verb(0) + " the " + m.object(0) + " on " + day + "."));
        s.context.push_back(Sentence::make(connective(1) + " " + name + " felt " + mood_phrase + " and " +
                                           verb(1) + " the " + m.object(1) + "."));
        s.context.push_back(
            Sentence::make(connective(2) + " " + name + " " + verb(2) + " the " + m.object(2) + "."));
        s.context.push_back(
            Sentence::make(connective(3) + " " + name + " " + verb(3) + " the " + m.object(3) + "."));
        s.ending = Sentence::make(name + " " + end_verb + " " + polar + " " + end_prep + " the " +
                                  m.object(3) + ".");
        s.validate();
        out.corpus.stories.push_back(std::move(s));
        out.meta.push_back(std::move(m));
    }
    return out;
}

inline SynthResult synth_corpus(int n_stories, std::uint64_t seed) {
    return synth_corpus(SynthConfig{}, n_stories, seed);
}

// Sidecar metadata: JSONL, one object per story, parallel to the story file.
inline void save_metadata(const std::vector<StoryMeta>& meta, std::ostream& out) {
    for (const StoryMeta& m : meta) {
        nlohmann::ordered_json j;
        j["id"] = m.id;
        j["chain"] = m.chain;
        j["trigger"] = m.trigger;
        j["polarity"] = m.positive ? "pos" : "neg";
        out << j.dump() << '\n';
    }
}

inline std::vector<StoryMeta> load_metadata(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open metadata file: " + path);
    std::vector<StoryMeta> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("bad metadata JSON at line " + std::to_string(lineno) + ": " + e.what());
        }
        StoryMeta m;
        m.id = j.at("id").get<std::string>();
        m.chain = j.at("chain").get<int>();
        m.trigger = j.at("trigger").get<int>();
        m.positive = j.at("polarity").get<std::string>() == "pos";
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace clseg
