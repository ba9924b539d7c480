// SPDX-FileCopyrightText: (c) 2026 clseg contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string_view>

// Shared word tables. The synthetic story generator and the default
// sentiment lexicon draw from the same lists, which is what makes the
// label-recovery oracles exact: every polarity cue a generated story can
// contain is a word the lexicon knows.

namespace clseg::words {

inline constexpr std::array<std::string_view, 10> kNames = {
    "alice", "ben", "carla", "dave", "emma", "felix", "grace", "henry", "ivy", "jack"};

inline constexpr std::array<std::string_view, 7> kDays = {
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};

// Every sentence opens with a connective drawn independently from this
// list; the connective of the final context sentence is the causal
// trigger that selects the ending phrasing. Because the trigger is
// positional rather than lexical, a model has to read the last sentence
// as the last sentence, which is exactly what shuffled-order negatives
// then violate.
inline constexpr std::array<std::string_view, 4> kTriggers = {"then", "soon", "later", "eventually"};
inline constexpr std::array<std::string_view, 4> kEndingVerbs = {"was", "felt", "seemed", "looked"};
inline constexpr std::array<std::string_view, 4> kEndingPreps = {"with", "about", "about", "with"};

// Context mood words (one appears in the second sentence) indexed
// [polarity][choice], and ending polarity words indexed
// [polarity][trigger]; polarity 0 = negative, 1 = positive. The ending
// word is a deterministic function of polarity and trigger, so a
// reverse-sentiment negative differs from the right ending exactly at the
// polarity slot.
inline constexpr std::array<std::array<std::string_view, 4>, 2> kContextMoods = {{
    {"gloomy", "upset", "worried", "tired"},
    {"glad", "cheerful", "hopeful", "excited"},
}};
inline constexpr std::array<std::array<std::string_view, 4>, 2> kEndingMoods = {{
    {"disappointed", "unhappy", "miserable", "annoyed"},
    {"delighted", "proud", "pleased", "thrilled"},
}};

struct ChainStep {
    std::string_view verb;
    std::string_view object_a;
    std::string_view object_b;
};

// Eight-step activity cycles. A story shows a four-step window in cyclic
// order, so the fourth event of a story is not a fixed property of the
// chain and can only be found positionally.
struct Chain {
    std::string_view theme;
    std::array<ChainStep, 8> steps;
};

inline constexpr std::array<Chain, 4> kChains = {{
    {"garden",
     {{{"raked", "leaves", "twigs"},
       {"cleared", "soil", "rocks"},
       {"planted", "seeds", "bulbs"},
       {"watered", "sprouts", "ferns"},
       {"pruned", "hedges", "vines"},
       {"weeded", "rows", "beds"},
       {"picked", "flowers", "berries"},
       {"stacked", "pots", "crates"}}}},
    {"kitchen",
     {{{"chose", "recipe", "menu"},
       {"rinsed", "bowls", "pans"},
       {"measured", "flour", "sugar"},
       {"mixed", "batter", "dough"},
       {"baked", "cake", "bread"},
       {"spread", "frosting", "icing"},
       {"plated", "slices", "portions"},
       {"washed", "dishes", "spoons"}}}},
    {"workshop",
     {{{"traced", "outlines", "patterns"},
       {"sawed", "boards", "planks"},
       {"sanded", "panels", "edges"},
       {"drilled", "holes", "slots"},
       {"nailed", "frame", "hinges"},
       {"glued", "joints", "corners"},
       {"painted", "shelf", "ladder"},
       {"polished", "handles", "knobs"}}}},
    {"trail",
     {{{"packed", "backpack", "canteen"},
       {"laced", "boots", "sneakers"},
       {"climbed", "ridge", "slope"},
       {"crossed", "stream", "bridge"},
       {"followed", "path", "markers"},
       {"spotted", "deer", "hawks"},
       {"reached", "summit", "lookout"},
       {"pitched", "tent", "tarp"}}}},
}};

// Mood antonyms pair the positive and negative cue words; object antonyms
// pair each step object with its counterfactual counterpart. Together
// they form an involution.
inline constexpr std::array<std::array<std::string_view, 2>, 9> kMoodAntonyms = {{
    {"glad", "gloomy"},
    {"cheerful", "upset"},
    {"hopeful", "worried"},
    {"excited", "tired"},
    {"delighted", "disappointed"},
    {"proud", "unhappy"},
    {"pleased", "miserable"},
    {"thrilled", "annoyed"},
    {"happy", "sad"},
}};

inline constexpr std::array<std::string_view, 51> kExtraPositive = {
    "amazing",  "awesome",   "beautiful", "brave",      "bright",   "brilliant", "calm",
    "charming", "confident", "content",   "delightful", "eager",    "excellent", "fabulous",
    "fantastic", "fine",     "friendly",  "fun",        "generous", "gentle",    "good",
    "grand",    "grateful",  "great",     "joyful",     "kind",     "lively",    "lovely",
    "lucky",    "merry",     "nice",      "optimistic", "peaceful", "perfect",   "playful",
    "radiant",  "relaxed",   "relieved",  "satisfied",  "smiling",  "splendid",  "strong",
    "sunny",    "superb",    "sweet",     "thankful",   "triumphant", "warm",    "welcoming",
    "wise",     "wonderful"};

inline constexpr std::array<std::string_view, 51> kExtraNegative = {
    "afraid",    "angry",     "anxious",    "ashamed",    "awful",     "bad",       "bitter",
    "bleak",     "bored",     "broken",     "clumsy",     "cold",      "cranky",
    "cruel",     "crushed",   "defeated",   "dreadful",   "dull",      "embarrassed",
    "empty",     "exhausted", "fearful",    "foolish",    "frantic",   "frustrated",
    "furious",   "grim",      "grumpy",     "guilty",     "harsh",     "heartbroken",
    "helpless",  "hopeless",  "horrible",   "hurt",       "jealous",   "lonely",
    "lost",      "mad",       "messy",      "moody",      "nervous",   "painful",
    "poor",      "scared",    "sorry",      "terrible",   "ugly",      "weak",
    "weary",     "wrong"};

inline constexpr std::array<std::string_view, 4> kNegation = {"not", "never", "no", "n't"};

}  // namespace clseg::words
