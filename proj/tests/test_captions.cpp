#include <catch2/catch_amalgamated.hpp>

#include "dualrec/captions.hpp"
#include "dualrec/synthworld.hpp"

using namespace dualrec;

namespace {
Vocab make_vocab() { return Vocab(AttributeSchema::defaults(), default_categories()); }

StructuredCaption sample_caption(const AttributeSchema& s, Rng& rng) {
    StructuredCaption c;
    for (int k = 0; k < kNumAttributes; ++k) {
        const auto& vv = s.value_vocab[size_t(k)];
        c.values[size_t(k)] = vv[size_t(rng.uniform_int(int(vv.size())))];
    }
    return c;
}
}  // namespace

TEST_CASE("render uses the exact canonical template") {
    StructuredCaption c{{"red", "denim", "pleated", "casual"}};
    REQUIRE(render(c) ==
            "Color: red; Material: denim; Design features: pleated; Clothing Fashion Style: casual");
}

TEST_CASE("parse(render(c)) round trips and render is injective") {
    auto schema = AttributeSchema::defaults();
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        auto c = sample_caption(schema, rng);
        REQUIRE(parse_caption(render(c), schema) == c);
        auto d = sample_caption(schema, rng);
        if (c == d) continue;
        REQUIRE(render(c) != render(d));
    }
}

TEST_CASE("parse rejects malformed strings") {
    auto schema = AttributeSchema::defaults();
    REQUIRE_THROWS_AS(parse_caption("Color: red", schema), SchemaError);
    REQUIRE_THROWS_AS(parse_caption("", schema), SchemaError);
    REQUIRE_THROWS_AS(
        parse_caption("Color: neon; Material: denim; Design features: pleated; "
                      "Clothing Fashion Style: casual",
                      schema),
        SchemaError);
}

TEST_CASE("tokenize produces L tokens with mask at the 4 value slots") {
    auto vocab = make_vocab();
    StructuredCaption c{{"blue", "wool", "striped", "formal"}};
    auto seq = tokenize(render(c), vocab);
    REQUIRE(int(seq.tokens.size()) == kCaptionLen);
    int marked = 0;
    for (size_t j = 0; j < seq.tokens.size(); ++j)
        if (seq.mask[j]) {
            ++marked;
            // the marked token is a legal value of some attribute
            bool legal = false;
            for (int k = 0; k < kNumAttributes; ++k)
                if (vocab.value_index_of_token(k, seq.tokens[j]) >= 0) legal = true;
            REQUIRE(legal);
        }
    REQUIRE(marked == kNumAttributes);
    REQUIRE(detokenize(seq, vocab) == render(c));
    REQUIRE_THROWS_AS(tokenize("", vocab), VocabError);
}

TEST_CASE("tokenize/detokenize identity on random captions") {
    auto vocab = make_vocab();
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        auto c = sample_caption(vocab.schema(), rng);
        auto seq = tokenize(render(c), vocab);
        REQUIRE(tokenize(detokenize(seq, vocab), vocab) == seq);
    }
}

TEST_CASE("caption-core vocabulary size matches the closed formula") {
    auto vocab = make_vocab();
    int values = 8 + 6 + 8 + 5;
    REQUIRE(vocab.caption_core_size() == kNumAttributes + values + 3 + 2);
}

TEST_CASE("mask_values endpoints") {
    auto vocab = make_vocab();
    StructuredCaption c{{"red", "denim", "pleated", "casual"}};
    auto y0 = tokenize(render(c), vocab);
    Rng rng(3);
    auto none = mask_values(y0, 0.0, rng);
    REQUIRE(none == y0);
    auto all = mask_values(y0, 1.0, rng);
    for (size_t j = 0; j < y0.tokens.size(); ++j) {
        if (y0.mask[j]) REQUIRE(all.tokens[j] == Vocab::kMaskTok);
        else REQUIRE(all.tokens[j] == y0.tokens[j]);
    }
}

TEST_CASE("mask_values Bernoulli rate at t=0.5") {
    auto vocab = make_vocab();
    StructuredCaption c{{"red", "denim", "pleated", "casual"}};
    auto y0 = tokenize(render(c), vocab);
    Rng rng(4);
    long masked = 0, total = 0;
    for (int i = 0; i < 100000; ++i) {
        auto yt = mask_values(y0, 0.5, rng);
        for (size_t j = 0; j < yt.tokens.size(); ++j)
            if (y0.mask[j]) {
                ++total;
                if (yt.tokens[j] == Vocab::kMaskTok) ++masked;
            }
    }
    REQUIRE(std::abs(double(masked) / double(total) - 0.5) < 0.01);
}

TEST_CASE("mask_values is deterministic for a fixed seed and never touches keys") {
    auto vocab = make_vocab();
    StructuredCaption c{{"green", "silk", "plain", "sporty"}};
    auto y0 = tokenize(render(c), vocab);
    Rng r1(9), r2(9);
    auto a = mask_values(y0, 0.7, r1);
    auto b = mask_values(y0, 0.7, r2);
    REQUIRE(a == b);
    for (size_t j = 0; j < y0.tokens.size(); ++j)
        if (!y0.mask[j]) REQUIRE(a.tokens[j] == y0.tokens[j]);
}

TEST_CASE("task definition template") {
    auto vocab = make_vocab();
    auto d = task_definition_tokens("shoes", vocab);
    REQUIRE(detokenize(d, vocab) == "Recommend a fashion shoes item, on white background.");
    auto d2 = task_definition_tokens("bag", vocab);
    int diff = 0;
    for (size_t i = 0; i < d.size(); ++i)
        if (d[i] != d2[i]) ++diff;
    REQUIRE(diff == 1);
    REQUIRE_THROWS_AS(task_definition_tokens("", vocab), VocabError);
    REQUIRE_THROWS_AS(task_definition_tokens("spaceship", vocab), VocabError);
}
