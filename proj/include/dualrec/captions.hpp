#pragma once

// Structured attribute captions: schema, canonical string rendering,
// the closed-vocabulary word-level tokenizer, and diffusion-time value
// masking. The canonical caption string
//   "Color: {v}; Material: {v}; Design features: {v}; Clothing Fashion Style: {v}"
// is a stable external format consumed by dataset files and the CLI.

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrec/rng.hpp"
#include "dualrec/schedules.hpp"

namespace dualrec {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VocabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int kNumAttributes = 4;
constexpr int kCaptionLen = 24;  // fixed token length, padded

struct AttributeSchema {
    // Keys are fixed, in order.
    static const std::array<std::string, kNumAttributes>& keys() {
        static const std::array<std::string, kNumAttributes> k = {
            "Color", "Material", "Design features", "Clothing Fashion Style"};
        return k;
    }

    std::array<std::vector<std::string>, kNumAttributes> value_vocab;

    static AttributeSchema defaults() {
        AttributeSchema s;
        s.value_vocab[0] = {"red", "blue", "green", "black", "white", "yellow", "purple", "orange"};
        s.value_vocab[1] = {"denim", "cotton", "leather", "silk", "wool", "linen"};
        s.value_vocab[2] = {"pleated", "embroidered", "striped", "plain",
                            "ruffled", "quilted", "fringed", "paneled"};
        s.value_vocab[3] = {"casual", "formal", "sporty", "vintage", "bohemian"};
        return s;
    }

    int value_index(int key, const std::string& v) const {
        const auto& vv = value_vocab[size_t(key)];
        for (size_t i = 0; i < vv.size(); ++i)
            if (vv[i] == v) return int(i);
        return -1;
    }

    void validate() const {
        for (int k = 0; k < kNumAttributes; ++k) {
            const auto& vv = value_vocab[size_t(k)];
            if (vv.empty()) throw SchemaError("schema: empty value vocab for " + keys()[size_t(k)]);
            for (size_t i = 0; i < vv.size(); ++i)
                for (size_t j = i + 1; j < vv.size(); ++j)
                    if (vv[i] == vv[j]) throw SchemaError("schema: duplicate value " + vv[i]);
        }
    }
};

struct StructuredCaption {
    std::array<std::string, kNumAttributes> values;

    bool operator==(const StructuredCaption&) const = default;

    void validate(const AttributeSchema& schema) const {
        for (int k = 0; k < kNumAttributes; ++k)
            if (schema.value_index(k, values[size_t(k)]) < 0)
                throw SchemaError("caption: value '" + values[size_t(k)] + "' not in vocab of " +
                                  AttributeSchema::keys()[size_t(k)]);
    }
};

inline std::string render(const StructuredCaption& c) {
    std::string out;
    for (int k = 0; k < kNumAttributes; ++k) {
        if (k) out += "; ";
        out += AttributeSchema::keys()[size_t(k)] + ": " + c.values[size_t(k)];
    }
    return out;
}

inline StructuredCaption parse_caption(const std::string& text, const AttributeSchema& schema) {
    StructuredCaption c;
    size_t pos = 0;
    for (int k = 0; k < kNumAttributes; ++k) {
        const std::string head = AttributeSchema::keys()[size_t(k)] + ": ";
        if (text.compare(pos, head.size(), head) != 0)
            throw SchemaError("parse_caption: expected '" + head + "' at position " +
                              std::to_string(pos));
        pos += head.size();
        size_t end = (k + 1 < kNumAttributes) ? text.find("; ", pos) : text.size();
        if (end == std::string::npos) throw SchemaError("parse_caption: missing separator");
        c.values[size_t(k)] = text.substr(pos, end - pos);
        pos = (k + 1 < kNumAttributes) ? end + 2 : end;
    }
    if (pos != text.size()) throw SchemaError("parse_caption: trailing characters");
    c.validate(schema);
    return c;
}

// Closed word-level vocabulary: special tokens, the four keys, every
// attribute value, the task-definition template words, and the category
// names. Multi-word key names are single tokens.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kMaskTok = 1;  // <extra_id0>
    static constexpr int kNullTok = 2;  // reserved marker for absent condition segments
    static constexpr int kColon = 3;    // renders as ": "
    static constexpr int kSemi = 4;     // renders as "; "
    static constexpr int kComma = 5;    // renders as ", "
    static constexpr int kNumSpecial = 6;

    Vocab() = default;
    Vocab(const AttributeSchema& schema, const std::vector<std::string>& categories)
        : schema_(schema) {
        schema.validate();
        words_ = {"<pad>", "<extra_id0>", "<null>", ":", ";", ","};
        for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = int(i);
        for (int k = 0; k < kNumAttributes; ++k) {
            key_token_[size_t(k)] = int(words_.size());
            push_unique(AttributeSchema::keys()[size_t(k)]);
        }
        for (int k = 0; k < kNumAttributes; ++k) {
            value_base_[size_t(k)] = int(words_.size());
            for (const auto& v : schema.value_vocab[size_t(k)]) push_unique(v);
        }
        caption_core_size_ = kNumAttributes + total_values() + 3 /*separators*/ + 2 /*pad, mask*/;
        for (const char* w : {"Recommend", "a", "fashion", "item,", "on", "white", "background."})
            push(w);
        for (const auto& cat : categories) push(cat);
    }

    int size() const { return int(words_.size()); }

    // Size of the caption-only vocabulary:
    // |keys| + sum |value_vocab| + |separators| + 2 (pad, mask).
    int caption_core_size() const { return caption_core_size_; }

    const std::string& word(int id) const {
        if (id < 0 || id >= size()) throw VocabError("vocab: id out of range");
        return words_[size_t(id)];
    }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) throw VocabError("vocab: unknown word '" + w + "'");
        return it->second;
    }

    bool contains(const std::string& w) const { return index_.count(w) > 0; }

    int key_token(int k) const { return key_token_[size_t(k)]; }

    int value_token(int k, const std::string& v) const {
        int vi = schema_.value_index(k, v);
        if (vi < 0) throw VocabError("vocab: '" + v + "' is not a value of attribute " +
                                     std::to_string(k));
        return value_base_[size_t(k)] + vi;
    }

    // -1 if the token is not a legal value for attribute k.
    int value_index_of_token(int k, int token) const {
        int lo = value_base_[size_t(k)];
        int hi = lo + int(schema_.value_vocab[size_t(k)].size());
        return (token >= lo && token < hi) ? token - lo : -1;
    }

    const AttributeSchema& schema() const { return schema_; }

private:
    int total_values() const {
        int n = 0;
        for (const auto& vv : schema_.value_vocab) n += int(vv.size());
        return n;
    }
    void push(const std::string& w) {
        if (index_.count(w)) return;  // categories may reuse schema words
        index_[w] = int(words_.size());
        words_.push_back(w);
    }
    // Keys and values must be globally distinct so token id ranges stay
    // disjoint per attribute.
    void push_unique(const std::string& w) {
        if (index_.count(w)) throw SchemaError("vocab: word reused across attributes: " + w);
        index_[w] = int(words_.size());
        words_.push_back(w);
    }

    AttributeSchema schema_;
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
    std::array<int, kNumAttributes> key_token_{};
    std::array<int, kNumAttributes> value_base_{};
    int caption_core_size_ = 0;
};

struct TokenSequence {
    std::vector<int> tokens;       // length kCaptionLen, padded
    std::vector<uint8_t> mask;     // 1 exactly at value positions

    bool operator==(const TokenSequence&) const = default;
};

// Tokenize a canonical caption rendering. The layout is
// [key ':' value ';'] x 4 (no trailing ';'), padded to kCaptionLen.
inline TokenSequence tokenize(const std::string& text, const Vocab& vocab) {
    if (text.empty()) throw VocabError("tokenize: empty string");
    StructuredCaption c = parse_caption(text, vocab.schema());
    TokenSequence seq;
    seq.tokens.assign(kCaptionLen, Vocab::kPad);
    seq.mask.assign(kCaptionLen, 0);
    int pos = 0;
    for (int k = 0; k < kNumAttributes; ++k) {
        seq.tokens[size_t(pos++)] = vocab.key_token(k);
        seq.tokens[size_t(pos++)] = Vocab::kColon;
        seq.mask[size_t(pos)] = 1;
        seq.tokens[size_t(pos++)] = vocab.value_token(k, c.values[size_t(k)]);
        if (k + 1 < kNumAttributes) seq.tokens[size_t(pos++)] = Vocab::kSemi;
    }
    return seq;
}

// Inverse of tokenize on valid sequences; also renders preference and
// template token streams (separators carry their trailing spaces).
inline std::string detokenize(const std::vector<int>& tokens, const Vocab& vocab) {
    std::string out;
    bool prev_word = false;
    for (int t : tokens) {
        if (t == Vocab::kPad) break;
        switch (t) {
            case Vocab::kColon: out += ": "; prev_word = false; break;
            case Vocab::kSemi: out += "; "; prev_word = false; break;
            case Vocab::kComma: out += ", "; prev_word = false; break;
            default:
                if (prev_word) out += ' ';
                out += vocab.word(t);
                prev_word = true;
        }
    }
    return out;
}

inline std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
    return detokenize(seq.tokens, vocab);
}

// Diffusion-time value masking (y_t from y_0): each value position is
// independently replaced by the mask token with probability mask_prob(t);
// keys, separators and padding are never altered.
inline TokenSequence mask_values(const TokenSequence& y0, double t, Rng& rng,
                                 const DiscreteSchedule& sched = {}) {
    double p = sched.mask_prob(t);
    TokenSequence yt = y0;
    for (size_t j = 0; j < y0.tokens.size(); ++j)
        if (y0.mask[j] && rng.bernoulli(p)) yt.tokens[j] = Vocab::kMaskTok;
    return yt;
}

// Token segment for the task-definition template
// "Recommend a fashion {category} item, on white background."
inline std::vector<int> task_definition_tokens(const std::string& category, const Vocab& vocab) {
    if (category.empty()) throw VocabError("task definition: empty category");
    std::vector<int> out;
    for (const std::string& w :
         {std::string("Recommend"), std::string("a"), std::string("fashion"), category,
          std::string("item,"), std::string("on"), std::string("white"),
          std::string("background.")})
        out.push_back(vocab.id(w));
    return out;
}

constexpr int kTaskDefLen = 8;

}  // namespace dualrec
