// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clseg/corpus.hpp"
#include "clseg/errors.hpp"
#include "clseg/lexicon.hpp"
#include "clseg/model.hpp"
#include "clseg/rng.hpp"
#include "clseg/tokenizer.hpp"

namespace clseg {

// ---------------------------------------------------------------------------
// Multi-aspect sampling: the three wrong-ending generators (shuffled
// ordering, counterfactual rewriting, reverse sentiment) plus the general
// token-corruption baseline. Full-scale auxiliary models are replaced by
// desk-scale stand-ins: a lexicon classifier for sentiment and a
// rule-based rewriter for counterfactual events.
// ---------------------------------------------------------------------------

struct ShuffledContext {
    std::vector<Sentence> context;
    std::vector<int> perm;  // perm[i] = original index of the sentence at position i
};

// Uniformly drawn non-identity permutation of the four context sentences.
inline ShuffledContext shuffle_context(const std::vector<Sentence>& context, std::uint64_t seed) {
    if (context.size() != 4) throw DataError("shuffle_context expects exactly 4 sentences");
    Rng rng(seed);
    std::vector<int> perm = {0, 1, 2, 3};
    do {
        perm = {0, 1, 2, 3};
        rng.shuffle(perm);
    } while (perm == std::vector<int>{0, 1, 2, 3});
    ShuffledContext out;
    out.perm = perm;
    for (int idx : perm) out.context.push_back(context[static_cast<std::size_t>(idx)]);
    return out;
}

namespace detail {

inline const std::array<const char*, 19>& auxiliary_words() {
    static const std::array<const char*, 19> kAux = {
        "was", "were", "is",  "are",  "am",     "did",    "does",   "do",  "had", "has",
        "have", "felt", "got", "went", "seemed", "looked", "would", "could", "should"};
    return kAux;
}

inline bool is_auxiliary(const std::string& t) {
    for (const char* a : auxiliary_words())
        if (t == a) return true;
    return false;
}

inline bool is_function_word(const std::string& t) {
    static const std::array<const char*, 14> kStop = {"the", "a",  "an", "and", "then", "on",
                                                      "to",  "of", "in", "at",  "with", "about",
                                                      "for", "so"};
    for (const char* s : kStop)
        if (t == s) return true;
    return t.size() == 1 && is_terminal_punct(t[0]);
}

}  // namespace detail

// Rule-based counterfactual rewrite of the last context event. Applies the
// first rule that fires: antonym substitution, negation toggle, then
// subject-object swap. Throws when no rule produces a changed sentence.
inline Sentence rewrite_counterfactual(const Sentence& last, const Lexicon& lexicon,
                                       std::uint64_t /*seed*/) {
    const std::vector<std::string> tokens = last.tokens();
    if (tokens.empty()) throw DataError("cannot rewrite an empty sentence");

    // rule 1: antonym substitution of the first covered content word
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto it = lexicon.antonyms.find(tokens[i]);
        if (it != lexicon.antonyms.end()) {
            std::vector<std::string> out = tokens;
            out[i] = it->second;
            if (out != tokens) return Sentence::make(join_tokens(out));
        }
    }

    // rule 2: negation toggle - remove the first negation word, or insert
    // "not" after the first auxiliary (falling back to the presumed verb
    // position, right after the leading subject token)
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (lexicon.negation.count(tokens[i])) {
            std::vector<std::string> out = tokens;
            out.erase(out.begin() + static_cast<std::ptrdiff_t>(i));
            if (!out.empty()) return Sentence::make(join_tokens(out));
        }
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (detail::is_auxiliary(tokens[i])) {
            std::vector<std::string> out = tokens;
            out.insert(out.begin() + static_cast<std::ptrdiff_t>(i) + 1, "not");
            return Sentence::make(join_tokens(out));
        }
    }
    if (tokens.size() >= 3) {
        std::vector<std::string> out = tokens;
        out.insert(out.begin() + 2, "not");
        return Sentence::make(join_tokens(out));
    }

    // rule 3: swap the first two content (noun-position) tokens
    std::vector<std::size_t> content;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (!detail::is_function_word(tokens[i]) && !detail::is_auxiliary(tokens[i]) &&
            !lexicon.negation.count(tokens[i]))
            content.push_back(i);
    if (content.size() >= 2 && tokens[content[0]] != tokens[content[1]]) {
        std::vector<std::string> out = tokens;
        std::swap(out[content[0]], out[content[1]]);
        return Sentence::make(join_tokens(out));
    }

    throw DataError("sentence not rewritable: " + last.text);
}

// One random corruption of the ending: swap two positions, drop a token,
// or substitute a random vocabulary token. Always returns a sequence that
// differs from the input.
inline Sentence sample_gcl(const Sentence& ending, const Tokenizer& tokenizer, std::uint64_t seed) {
    std::vector<int> ids = tokenizer.encode(ending.text).ids;
    if (ids.empty()) throw DataError("cannot corrupt an empty ending");
    Rng rng(seed);

    int op = ids.size() == 1 ? 2 : rng.next_int(0, 2);
    if (op == 0) {
        bool uniform = true;
        for (int v : ids)
            if (v != ids[0]) uniform = false;
        if (uniform) op = 2;  // swapping identical tokens cannot change anything
    }

    if (op == 0) {  // shuffle two positions
        while (true) {
            const int i = rng.next_int(0, static_cast<int>(ids.size()) - 1);
            const int j = rng.next_int(0, static_cast<int>(ids.size()) - 1);
            if (i != j && ids[static_cast<std::size_t>(i)] != ids[static_cast<std::size_t>(j)]) {
                std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
                break;
            }
        }
    } else if (op == 1) {  // drop one token
        const int i = rng.next_int(0, static_cast<int>(ids.size()) - 1);
        ids.erase(ids.begin() + i);
    } else {  // replace one token with a random ordinary token
        const int lo = tokenizer.vocab_size() > kUnk + 1 ? kUnk + 1 : kUnk;
        if (tokenizer.vocab_size() <= lo) throw DataError("vocabulary too small for token replacement");
        const int i = rng.next_int(0, static_cast<int>(ids.size()) - 1);
        const int old = ids[static_cast<std::size_t>(i)];
        int pick = old;
        for (int tries = 0; pick == old; ++tries) {
            if (tries > 1000) throw DataError("no alternative token available for replacement");
            pick = rng.next_int(lo, tokenizer.vocab_size() - 1);
        }
        ids[static_cast<std::size_t>(i)] = pick;
    }
    TokenSeq seq;
    seq.ids = std::move(ids);
    return Sentence::make(tokenizer.decode(seq));
}

struct NegativeProvenance {
    std::vector<int> perm;  // SO shuffle permutation
    std::string x4_star;    // counterfactual fourth sentence ("" when the rewrite failed)
    int tag_rs = 0;         // reversed sentiment tag used for RS conditioning
    bool fallback_so = false, fallback_cr = false, fallback_rs = false;
};

struct NegativeSet {
    std::string story_id;
    Sentence so, cr, rs;
    NegativeProvenance provenance;
};

namespace detail {

inline std::optional<Sentence> decode_if_new(const Tokenizer& tokenizer, const TokenSeq& generated,
                                             const TokenSeq& true_ending) {
    if (generated.ids.empty() || generated.ids == true_ending.ids) return std::nullopt;
    return Sentence::make(tokenizer.decode(generated));
}

}  // namespace detail

struct SamplerSettings {
    int max_gen_len = 16;
};

// SO: greedy ending from a shuffled context; reshuffle on collision with
// the true ending, then fall back to token corruption.
inline std::tuple<Sentence, std::vector<int>, bool> sample_so(const Parameters<float>& seg_base,
                                                              const Tokenizer& tokenizer,
                                                              const Story& story, std::uint64_t seed,
                                                              const SamplerSettings& settings = {}) {
    const TokenSeq true_y = tokenizer.encode(story.ending.text);
    std::vector<int> perm = {0, 1, 2, 3};
    for (int attempt = 0; attempt < 8; ++attempt) {
        ShuffledContext sc = shuffle_context(story.context, seed + static_cast<std::uint64_t>(attempt));
        perm = sc.perm;
        Story shuffled = story;
        shuffled.context = sc.context;
        const auto [q, y] = tokenizer.encode_story(shuffled);
        (void)y;
        TokenSeq gen = generate_greedy(seg_base, q, settings.max_gen_len);
        if (auto s = detail::decode_if_new(tokenizer, gen, true_y)) return {*s, perm, false};
    }
    return {sample_gcl(story.ending, tokenizer, seed + 0x5f0u), perm, true};
}

// CR: greedy ending from {X1, X2, X3, X4*} where X4* is the rule-based
// counterfactual rewrite of the fourth sentence.
inline std::tuple<Sentence, std::string, bool> sample_cr(const Parameters<float>& seg_base,
                                                         const Tokenizer& tokenizer, const Story& story,
                                                         const Lexicon& lexicon, std::uint64_t seed,
                                                         const SamplerSettings& settings = {}) {
    const TokenSeq true_y = tokenizer.encode(story.ending.text);
    std::string x4_star;
    try {
        Sentence rewritten = rewrite_counterfactual(story.context[3], lexicon, seed);
        x4_star = rewritten.text;
        Story cf = story;
        cf.context[3] = rewritten;
        const auto [q, y] = tokenizer.encode_story(cf);
        (void)y;
        TokenSeq gen = generate_greedy(seg_base, q, settings.max_gen_len);
        if (auto s = detail::decode_if_new(tokenizer, gen, true_y)) return {*s, x4_star, false};
    } catch (const DataError&) {
        // not rewritable; fall through to corruption
    }
    return {sample_gcl(story.ending, tokenizer, seed + 0x5f1u), x4_star, true};
}

// RS: greedy ending conditioned on the reverse of the context's sentiment
// tag (control-token conditioning of the SCT model).
inline std::tuple<Sentence, SentimentTagKind, bool> sample_rs(const Parameters<float>& seg_sct,
                                                              const Tokenizer& tokenizer,
                                                              const Story& story, const Lexicon& lexicon,
                                                              std::uint64_t seed,
                                                              const SamplerSettings& settings = {}) {
    const TokenSeq true_y = tokenizer.encode(story.ending.text);
    const SentimentTagKind tag = reverse(lexicon.classify(story.context));
    const auto [q, y] = tokenizer.encode_story(story, tag);
    (void)y;
    TokenSeq gen = generate_greedy(seg_sct, q, settings.max_gen_len);
    if (auto s = detail::decode_if_new(tokenizer, gen, true_y)) return {*s, tag, false};
    return {sample_gcl(story.ending, tokenizer, seed + 0x5f2u), tag, true};
}

inline std::uint64_t story_subseed(std::uint64_t seed, std::size_t index) {
    return seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1));
}

// One NegativeSet per story, in corpus order, deterministic per seed.
inline std::vector<NegativeSet> build_negative_sets(const Corpus& corpus,
                                                    const Parameters<float>& seg_base,
                                                    const Parameters<float>& seg_sct,
                                                    const Tokenizer& tokenizer, const Lexicon& lexicon,
                                                    std::uint64_t seed,
                                                    const SamplerSettings& settings = {}) {
    std::vector<NegativeSet> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.stories.size(); ++i) {
        const Story& story = corpus.stories[i];
        const std::uint64_t s = story_subseed(seed, i);
        NegativeSet ns;
        ns.story_id = story.id;
        auto [so, perm, fb_so] = sample_so(seg_base, tokenizer, story, s, settings);
        ns.so = so;
        ns.provenance.perm = perm;
        ns.provenance.fallback_so = fb_so;
        auto [cr, x4, fb_cr] = sample_cr(seg_base, tokenizer, story, lexicon, s + 0x10000u, settings);
        ns.cr = cr;
        ns.provenance.x4_star = x4;
        ns.provenance.fallback_cr = fb_cr;
        auto [rs, tag, fb_rs] = sample_rs(seg_sct, tokenizer, story, lexicon, s + 0x20000u, settings);
        ns.rs = rs;
        ns.provenance.tag_rs = tag_value(tag);
        ns.provenance.fallback_rs = fb_rs;
        out.push_back(std::move(ns));
    }
    return out;
}

// GCL baseline sets: three independent corruptions of the true ending in
// place of the three mechanisms.
inline std::vector<NegativeSet> build_gcl_sets(const Corpus& corpus, const Tokenizer& tokenizer,
                                               std::uint64_t seed) {
    std::vector<NegativeSet> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.stories.size(); ++i) {
        const Story& story = corpus.stories[i];
        const std::uint64_t s = story_subseed(seed, i);
        NegativeSet ns;
        ns.story_id = story.id;
        ns.so = sample_gcl(story.ending, tokenizer, s);
        ns.cr = sample_gcl(story.ending, tokenizer, s + 1);
        ns.rs = sample_gcl(story.ending, tokenizer, s + 2);
        ns.provenance.tag_rs = tag_value(SentimentTagKind::Positive);
        out.push_back(std::move(ns));
    }
    return out;
}

inline void save_negative_sets(const std::vector<NegativeSet>& sets, std::ostream& out) {
    for (const NegativeSet& ns : sets) {
        nlohmann::ordered_json j;
        j["story_id"] = ns.story_id;
        j["so"] = ns.so.text;
        j["cr"] = ns.cr.text;
        j["rs"] = ns.rs.text;
        nlohmann::ordered_json prov;
        prov["perm"] = ns.provenance.perm;
        prov["x4_star"] = ns.provenance.x4_star;
        prov["tag_rs"] = ns.provenance.tag_rs;
        prov["fallback"] = {{"so", ns.provenance.fallback_so},
                            {"cr", ns.provenance.fallback_cr},
                            {"rs", ns.provenance.fallback_rs}};
        j["provenance"] = prov;
        out << j.dump() << '\n';
    }
}

inline std::vector<NegativeSet> load_negative_sets(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open negatives file: " + path);
    std::vector<NegativeSet> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("bad negatives JSON at line " + std::to_string(lineno) + ": " + e.what());
        }
        NegativeSet ns;
        ns.story_id = j.at("story_id").get<std::string>();
        ns.so = Sentence::make(j.at("so").get<std::string>());
        ns.cr = Sentence::make(j.at("cr").get<std::string>());
        ns.rs = Sentence::make(j.at("rs").get<std::string>());
        const auto& prov = j.at("provenance");
        ns.provenance.perm = prov.at("perm").get<std::vector<int>>();
        ns.provenance.x4_star = prov.at("x4_star").get<std::string>();
        ns.provenance.tag_rs = prov.at("tag_rs").get<int>();
        ns.provenance.fallback_so = prov.at("fallback").at("so").get<bool>();
        ns.provenance.fallback_cr = prov.at("fallback").at("cr").get<bool>();
        ns.provenance.fallback_rs = prov.at("fallback").at("rs").get<bool>();
        out.push_back(std::move(ns));
    }
    return out;
}

}  // namespace clseg
