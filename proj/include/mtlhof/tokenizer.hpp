#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtlhof/common.hpp"
#include "mtlhof/normalizer.hpp"
#include "mtlhof/utf8.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// WordPiece-style subword vocabulary and encoder: greedy longest-match-first
// segmentation with "##" marking word-internal continuations.
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kContinuation = "##";

    std::vector<std::string> tokens;  // index == id; [PAD] is id 0
    std::unordered_map<std::string, int> index;

    int pad_id() const { return 0; }
    int unk_id() const { return index.at(kUnk); }
    int cls_id() const { return index.at(kCls); }
    int sep_id() const { return index.at(kSep); }

    int size() const { return static_cast<int>(tokens.size()); }

    bool contains(const std::string& token) const { return index.count(token) > 0; }

    int id_of(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? unk_id() : it->second;
    }

    void rebuild_index() {
        index.clear();
        for (int i = 0; i < size(); ++i) {
            auto [it, inserted] = index.emplace(tokens[static_cast<std::size_t>(i)], i);
            if (!inserted)
                throw VocabError("duplicate vocabulary token: " +
                                 tokens[static_cast<std::size_t>(i)]);
        }
    }

    void validate() const {
        if (tokens.empty() || tokens[0] != kPad)
            throw VocabError("vocabulary must place [PAD] at id 0");
        for (const char* special : {kUnk, kCls, kSep})
            if (!contains(special))
                throw VocabError(std::string("vocabulary is missing ") + special);
    }
};

struct EncodedText {
    std::vector<int> ids;   // length max_len
    std::vector<int> mask;  // 1 on the real-token prefix, 0 on padding
};

// Atomic tokens that must never be split: entity and alias tokens from the
// normalizer configuration.
inline std::vector<std::string> atomic_tokens(const NormalizerConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& [cls, tok] : cfg.entity_tokens) out.push_back(tok);
    for (const auto& [seq, alias] : cfg.emoji_aliases)
        if (std::find(out.begin(), out.end(), alias) == out.end()) out.push_back(alias);
    return out;
}

namespace tok_detail {

inline std::vector<std::string> whitespace_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

}  // namespace tok_detail

// Builds a vocabulary from a normalized corpus: the four specials, the given
// atomic tokens, every position-aware single character seen, then greedy
// highest-frequency pair merges until target_size is reached.
inline Vocab build_vocab(const std::vector<std::string>& corpus, int target_size,
                         const std::vector<std::string>& atomics = {}) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    if (target_size < 5)
        throw ConfigError("build_vocab: target_size must be at least 5, got " +
                          std::to_string(target_size));

    Vocab vocab;
    auto push = [&vocab, target_size](const std::string& tok) {
        if (vocab.size() >= target_size) return false;
        if (!vocab.index.count(tok)) {
            vocab.index.emplace(tok, vocab.size());
            vocab.tokens.push_back(tok);
        }
        return true;
    };
    push(Vocab::kPad);
    push(Vocab::kUnk);
    push(Vocab::kCls);
    push(Vocab::kSep);
    for (const auto& tok : atomics) push(tok);

    // word frequency, skipping atomic tokens
    std::map<std::string, long long> word_freq;
    for (const auto& line : corpus)
        for (auto& w : tok_detail::whitespace_words(line))
            if (!vocab.index.count(w)) ++word_freq[w];

    // each word as its symbol sequence: first char, then ##-continuations
    struct WordState {
        std::vector<std::string> symbols;
        long long freq;
    };
    std::vector<WordState> words;
    for (const auto& [w, f] : word_freq) {
        WordState ws;
        ws.freq = f;
        auto chars = utf8_chars(w);
        for (std::size_t i = 0; i < chars.size(); ++i)
            ws.symbols.push_back(i == 0 ? chars[i] : Vocab::kContinuation + chars[i]);
        words.push_back(std::move(ws));
    }

    // position-aware single characters, in first-seen corpus order
    for (const auto& ws : words)
        for (const auto& sym : ws.symbols) push(sym);

    // greedy pair merges by frequency; ties break on the lexicographically
    // smallest pair for determinism
    while (vocab.size() < target_size) {
        std::map<std::pair<std::string, std::string>, long long> pair_freq;
        for (const auto& ws : words)
            for (std::size_t i = 0; i + 1 < ws.symbols.size(); ++i)
                pair_freq[{ws.symbols[i], ws.symbols[i + 1]}] += ws.freq;
        if (pair_freq.empty()) break;

        std::pair<std::string, std::string> best;
        long long best_freq = -1;
        for (const auto& [pair, freq] : pair_freq) {
            if (freq > best_freq) {
                best = pair;
                best_freq = freq;
            }
        }
        std::string merged = best.first + best.second.substr(2);  // drop "##"
        if (!push(merged)) break;
        for (auto& ws : words) {
            for (std::size_t i = 0; i + 1 < ws.symbols.size();) {
                if (ws.symbols[i] == best.first && ws.symbols[i + 1] == best.second) {
                    ws.symbols[i] = merged;
                    ws.symbols.erase(ws.symbols.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                } else {
                    ++i;
                }
            }
        }
    }

    vocab.validate();
    return vocab;
}

// Greedy longest-match-first segmentation of one whitespace word; any
// unmatched span makes the whole word [UNK].
inline std::vector<int> wordpiece_segment(const std::string& word, const Vocab& vocab) {
    constexpr std::size_t kMaxWordChars = 100;
    auto chars = utf8_chars(word);
    if (chars.empty() || chars.size() > kMaxWordChars) return {vocab.unk_id()};
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < chars.size()) {
        std::size_t end = chars.size();
        int found = -1;
        while (end > start) {
            std::string sub;
            if (start > 0) sub = Vocab::kContinuation;
            for (std::size_t i = start; i < end; ++i) sub += chars[i];
            auto it = vocab.index.find(sub);
            if (it != vocab.index.end()) {
                found = it->second;
                break;
            }
            --end;
        }
        if (found < 0) return {vocab.unk_id()};
        pieces.push_back(found);
        start = end;
    }
    return pieces;
}

// Encodes normalized text to a fixed-length id sequence with attention mask:
// [CLS] pieces... [SEP] padded to max_len, truncating pieces to fit.
inline EncodedText encode(std::string_view text, const Vocab& vocab, int max_len) {
    if (max_len < 2)
        throw ContractError("encode: max_len must be at least 2, got " +
                            std::to_string(max_len));
    std::vector<int> pieces;
    for (const auto& word : tok_detail::whitespace_words(text)) {
        auto seg = wordpiece_segment(word, vocab);
        pieces.insert(pieces.end(), seg.begin(), seg.end());
    }
    if (static_cast<int>(pieces.size()) > max_len - 2)
        pieces.resize(static_cast<std::size_t>(max_len - 2));

    EncodedText enc;
    enc.ids.reserve(static_cast<std::size_t>(max_len));
    enc.ids.push_back(vocab.cls_id());
    enc.ids.insert(enc.ids.end(), pieces.begin(), pieces.end());
    enc.ids.push_back(vocab.sep_id());
    int real = static_cast<int>(enc.ids.size());
    enc.ids.resize(static_cast<std::size_t>(max_len), vocab.pad_id());
    enc.mask.assign(static_cast<std::size_t>(max_len), 0);
    std::fill(enc.mask.begin(), enc.mask.begin() + real, 1);
    return enc;
}

// Reassembles the in-vocab words of an encoded sequence ("##" joins removed,
// specials dropped).
inline std::string decode(const EncodedText& enc, const Vocab& vocab) {
    std::string out;
    for (std::size_t i = 0; i < enc.ids.size(); ++i) {
        if (enc.mask[i] == 0) break;
        int id = enc.ids[i];
        if (id == vocab.pad_id() || id == vocab.cls_id() || id == vocab.sep_id()) continue;
        const std::string& tok = vocab.tokens[static_cast<std::size_t>(id)];
        if (tok.rfind(Vocab::kContinuation, 0) == 0) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out.push_back(' ');
            out += tok;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocab file format: one token per line, line number == id.
// ---------------------------------------------------------------------------

inline void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file: " + path);
    for (const auto& tok : vocab.tokens) out << tok << '\n';
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocab file: " + path);
    Vocab vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab.tokens.push_back(line);
    }
    vocab.rebuild_index();
    vocab.validate();
    return vocab;
}

}  // namespace mtlhof
