#pragma once

#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mtlhof/common.hpp"
#include "mtlhof/utf8.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Tweet normalization: entity substitution, hashtag segmentation, emoji
// aliasing, and whitespace canonicalization. The entity patterns below are
// the pinned grammar this project tests against; they are deliberately
// conservative so that plain numbers stay verbatim.
//
// Pattern notes:
//  - patterns are ASCII-anchored, which keeps byte-level regex matching safe
//    on UTF-8 input (multibyte sequences never contain ASCII bytes);
//  - no optional whitespace inside numeric patterns, so segmented hashtag
//    output ("12 pm") is never re-captured and normalize stays idempotent.
// ---------------------------------------------------------------------------

struct NormalizerConfig {
    // entity class -> replacement token (angle-bracket wrapped, no whitespace)
    std::map<std::string, std::string> entity_tokens;
    // emoji codepoint sequence -> alias token of the form ":name:"
    std::map<std::u32string, std::string> emoji_aliases;
    // optional word list for lowercase hashtag segmentation
    std::vector<std::string> segmentation_lexicon;

    static NormalizerConfig defaults();

    void validate() const {
        for (const auto& [cls, tok] : entity_tokens) {
            if (tok.size() < 3 || tok.front() != '<' || tok.back() != '>')
                throw ConfigError("entity token for '" + cls +
                                  "' must be wrapped in angle brackets: " + tok);
            for (char c : tok)
                if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
                    throw ConfigError("entity token for '" + cls +
                                      "' must not contain whitespace");
        }
        for (const auto& [seq, alias] : emoji_aliases) {
            if (seq.empty()) throw ConfigError("empty emoji codepoint sequence");
            if (alias.size() < 3 || alias.front() != ':' || alias.back() != ':')
                throw ConfigError("emoji alias must match \":name:\", got " + alias);
            for (char c : alias)
                if (c == ' ' || c == '\t')
                    throw ConfigError("emoji alias must not contain whitespace: " + alias);
        }
    }
};

namespace norm_detail {

struct EntityPattern {
    const char* cls;
    std::regex re;
};

inline const std::vector<EntityPattern>& entity_patterns() {
    static const std::vector<EntityPattern> patterns = [] {
        auto flags = std::regex::ECMAScript | std::regex::optimize;
        std::vector<EntityPattern> v;
        v.push_back({"url",
                     std::regex(R"(\b(https?://|www\.)[A-Za-z0-9\-._~:/?#\[\]@!$&'()*+,;=%]+)",
                                flags)});
        v.push_back({"email",
                     std::regex(R"(\b[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,})",
                                flags)});
        v.push_back({"user", std::regex(R"(@[A-Za-z0-9_]+)", flags)});
        v.push_back({"time",
                     std::regex(R"(\b(\d{1,2}:\d{2}(:\d{2})?([AaPp][Mm])?|\d{1,2}[AaPp][Mm])\b)",
                                flags)});
        v.push_back({"date",
                     std::regex(R"(\b\d{1,4}[-/]\d{1,2}[-/]\d{1,4}\b)", flags)});
        v.push_back({"phone",
                     std::regex(R"((\+\d{7,15}|\b\d{3}[-.]\d{3}[-.]\d{4})\b)", flags)});
        v.push_back({"percent", std::regex(R"(\b\d+(\.\d+)?%)", flags)});
        v.push_back({"money",
                     std::regex(R"((\$|€|£)\d+(,\d{3})*(\.\d+)?)", flags)});
        return v;
    }();
    return patterns;
}

inline const std::regex& hashtag_pattern() {
    static const std::regex re(R"(#([A-Za-z0-9_]+))",
                               std::regex::ECMAScript | std::regex::optimize);
    return re;
}

inline bool is_ascii_upper(char32_t c) { return c >= U'A' && c <= U'Z'; }
inline bool is_ascii_lower(char32_t c) { return c >= U'a' && c <= U'z'; }
inline bool is_ascii_digit(char32_t c) { return c >= U'0' && c <= U'9'; }

// Splits at camel-case and letter/digit boundaries. "COVIDVaccine" splits
// before the last upper of an upper run when a lower follows.
inline std::vector<std::string> boundary_split(const std::vector<char32_t>& cps) {
    std::vector<std::string> parts;
    std::u32string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            parts.push_back(utf8_encode(std::vector<char32_t>(cur.begin(), cur.end())));
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        char32_t c = cps[i];
        if (!cur.empty()) {
            char32_t prev = cur.back();
            bool boundary = false;
            if (is_ascii_lower(prev) && is_ascii_upper(c)) boundary = true;
            if (is_ascii_digit(prev) != is_ascii_digit(c)) boundary = true;
            if (is_ascii_upper(prev) && is_ascii_upper(c) && i + 1 < cps.size() &&
                is_ascii_lower(cps[i + 1]))
                boundary = true;
            if (boundary) flush();
        }
        cur.push_back(c);
    }
    flush();
    return parts;
}

// Fewest-words segmentation over the lexicon with longest-first tie-breaking;
// returns empty when no complete segmentation exists.
inline std::vector<std::string> lexicon_segment(const std::string& word,
                                                const std::unordered_set<std::string>& lex) {
    auto cps = utf8_decode(word);
    std::size_t n = cps.size();
    constexpr int kInf = 1 << 29;
    std::vector<int> best(n + 1, kInf);
    best[n] = 0;
    std::vector<std::size_t> pick(n + 1, 0);
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = n; j > i; --j) {  // longest candidate first
            std::string piece =
                utf8_encode(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(i),
                                                  cps.begin() + static_cast<std::ptrdiff_t>(j)));
            if (lex.count(piece) && best[j] != kInf && 1 + best[j] < best[i]) {
                best[i] = 1 + best[j];
                pick[i] = j;
            }
        }
    }
    if (best[0] == kInf) return {};
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = pick[i];
        out.push_back(utf8_encode(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(i),
                                                        cps.begin() + static_cast<std::ptrdiff_t>(j))));
        i = j;
    }
    return out;
}

}  // namespace norm_detail

// Splits a hashtag body into its constituent words. Camel-case and
// letter/digit boundaries always split; an all-lowercase alphabetic piece is
// segmented against the lexicon (fewest words, then longest-first) when one
// is provided, and returned whole otherwise.
inline std::vector<std::string> segment_hashtag(const std::string& tag_body,
                                                const std::vector<std::string>& lexicon) {
    if (tag_body.empty()) return {};
    auto cps = utf8_decode(tag_body);

    // underscores act as removed separators
    std::vector<std::vector<char32_t>> chunks(1);
    for (char32_t c : cps) {
        if (c == U'_') {
            if (!chunks.back().empty()) chunks.emplace_back();
        } else {
            chunks.back().push_back(c);
        }
    }
    if (chunks.back().empty()) chunks.pop_back();

    std::unordered_set<std::string> lex(lexicon.begin(), lexicon.end());
    std::vector<std::string> out;
    for (const auto& chunk : chunks) {
        for (auto& part : norm_detail::boundary_split(chunk)) {
            bool all_lower = !part.empty();
            for (char32_t c : utf8_decode(part))
                if (!norm_detail::is_ascii_lower(c)) all_lower = false;
            if (all_lower && !lex.empty()) {
                auto seg = norm_detail::lexicon_segment(part, lex);
                if (!seg.empty()) {
                    out.insert(out.end(), seg.begin(), seg.end());
                    continue;
                }
            }
            out.push_back(part);
        }
    }
    return out;
}

// Full preprocessing pipeline; a total, idempotent function on UTF-8 strings.
inline std::string normalize(std::string_view text, const NormalizerConfig& config) {
    // 1. line breaks and tabs become spaces
    std::string s;
    s.reserve(text.size());
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == '\t' || c == '\v' || c == '\f')
            s.push_back(' ');
        else
            s.push_back(c);
    }

    auto substitute_entities = [&config](std::string str) {
        for (const auto& pattern : norm_detail::entity_patterns()) {
            auto it = config.entity_tokens.find(pattern.cls);
            if (it == config.entity_tokens.end()) continue;
            str = std::regex_replace(str, pattern.re, it->second);
        }
        return str;
    };

    // 2. entity substitution; URLs go first so hashtags inside them are kept
    s = substitute_entities(std::move(s));

    // 3. hashtag segmentation
    {
        std::string out;
        out.reserve(s.size());
        auto begin = std::sregex_iterator(s.begin(), s.end(),
                                          norm_detail::hashtag_pattern());
        auto end = std::sregex_iterator();
        std::size_t last = 0;
        for (auto it = begin; it != end; ++it) {
            out.append(s, last, static_cast<std::size_t>(it->position()) - last);
            auto words = segment_hashtag((*it)[1].str(), config.segmentation_lexicon);
            for (std::size_t w = 0; w < words.size(); ++w) {
                if (w) out.push_back(' ');
                out.append(words[w]);
            }
            last = static_cast<std::size_t>(it->position() + it->length());
        }
        out.append(s, last, std::string::npos);
        s = std::move(out);
    }

    // 4. entity substitution again: segmentation can split a digit run off a
    // hashtag body and expose a time/date form, and normalize must be
    // idempotent, so those have to be caught in the same pass
    s = substitute_entities(std::move(s));

    // 5. emoji aliasing, longest codepoint sequence first
    if (!config.emoji_aliases.empty()) {
        std::size_t max_key = 1;
        for (const auto& [k, v] : config.emoji_aliases)
            max_key = std::max(max_key, k.size());
        auto cps = utf8_decode(s);
        std::string out;
        out.reserve(s.size());
        std::size_t i = 0;
        while (i < cps.size()) {
            std::size_t longest = 0;
            const std::string* alias = nullptr;
            std::size_t limit = std::min(max_key, cps.size() - i);
            for (std::size_t len = limit; len >= 1; --len) {
                std::u32string key(cps.begin() + static_cast<std::ptrdiff_t>(i),
                                   cps.begin() + static_cast<std::ptrdiff_t>(i + len));
                auto it = config.emoji_aliases.find(key);
                if (it != config.emoji_aliases.end()) {
                    longest = len;
                    alias = &it->second;
                    break;
                }
            }
            if (alias) {
                out.push_back(' ');
                out.append(*alias);
                out.push_back(' ');
                i += longest;
            } else {
                utf8_append(out, cps[i]);
                ++i;
            }
        }
        s = std::move(out);
    }

    // 6. collapse space runs and trim
    {
        std::string out;
        out.reserve(s.size());
        bool pending_space = false;
        for (char c : s) {
            if (c == ' ') {
                pending_space = !out.empty();
            } else {
                if (pending_space) out.push_back(' ');
                pending_space = false;
                out.push_back(c);
            }
        }
        s = std::move(out);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Data-file loaders: alias table ("<emoji>\t<name>" per line) and lexicon
// (one word per line). '#'-prefixed lines are comments.
// ---------------------------------------------------------------------------

inline std::map<std::u32string, std::string> load_emoji_aliases(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open alias table: " + path);
    std::map<std::u32string, std::string> table;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("alias table line " + std::to_string(lineno) +
                            " is not tab-separated: " + path);
        std::string emoji = line.substr(0, tab);
        std::string name = line.substr(tab + 1);
        auto cps = utf8_decode(emoji);
        table[std::u32string(cps.begin(), cps.end())] = ":" + name + ":";
    }
    return table;
}

inline std::vector<std::string> load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon: " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        words.push_back(line);
    }
    return words;
}

inline NormalizerConfig NormalizerConfig::defaults() {
    NormalizerConfig cfg;
    cfg.entity_tokens = {
        {"url", "<url>"},     {"email", "<email>"}, {"user", "<user>"},
        {"percent", "<percent>"}, {"money", "<money>"}, {"time", "<time>"},
        {"date", "<date>"},   {"phone", "<phone>"},
    };
    static const std::pair<const char*, const char*> kEmoji[] = {
        {"\U0001F600", "grinning_face"},
        {"\U0001F601", "beaming_face"},
        {"\U0001F602", "face_with_tears_joy"},
        {"\U0001F923", "rolling_on_floor_laughing"},
        {"\U0001F603", "smiling_face_open_mouth"},
        {"\U0001F604", "smiling_face_smiling_eyes"},
        {"\U0001F605", "grinning_face_sweat"},
        {"\U0001F609", "winking_face"},
        {"\U0001F60A", "smiling_face"},
        {"\U0001F60D", "smiling_face_heart_eyes"},
        {"\U0001F618", "face_blowing_kiss"},
        {"\U0001F60E", "smiling_face_sunglasses"},
        {"\U0001F610", "neutral_face"},
        {"\U0001F612", "unamused_face"},
        {"\U0001F614", "pensive_face"},
        {"\U0001F621", "pouting_face"},
        {"\U0001F620", "angry_face"},
        {"\U0001F92C", "face_with_symbols_on_mouth"},
        {"\U0001F622", "crying_face"},
        {"\U0001F62D", "loudly_crying_face"},
        {"\U0001F631", "face_screaming_in_fear"},
        {"\U0001F634", "sleeping_face"},
        {"\U0001F644", "face_with_rolling_eyes"},
        {"\U0001F914", "thinking_face"},
        {"\U0001F92E", "face_vomiting"},
        {"\U0001F480", "skull"},
        {"\U0001F44D", "thumbs_up"},
        {"\U0001F44E", "thumbs_down"},
        {"\U0001F64F", "folded_hands"},
        {"\U0001F525", "fire"},
        {"\U0001F4AF", "hundred_points"},
        {"\U0001F389", "party_popper"},
        {"\U0001F494", "broken_heart"},
        {"❤️", "red_heart"},
        {"❤", "red_heart"},
    };
    for (const auto& [emoji, name] : kEmoji) {
        auto cps = utf8_decode(emoji);
        cfg.emoji_aliases[std::u32string(cps.begin(), cps.end())] =
            ":" + std::string(name) + ":";
    }
    return cfg;
}

}  // namespace mtlhof
