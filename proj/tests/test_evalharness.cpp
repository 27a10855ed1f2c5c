#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "dualrec/evalharness.hpp"

using namespace dualrec;

namespace {

Dataset small_world(uint64_t seed = 3) {
    WorldSpec spec;
    spec.c = 4;
    spec.h = 4;
    spec.w = 4;
    spec.n_items = 40;
    spec.n_users = 6;
    spec.n_outfits = 12;
    spec.outfit_size = 3;
    spec.seed = seed;
    return gen_world(spec);
}

StructuredCaption random_caption(const AttributeSchema& schema, Rng& rng) {
    StructuredCaption c;
    for (int k = 0; k < kNumAttributes; ++k) {
        const auto& vv = schema.value_vocab[size_t(k)];
        c.values[size_t(k)] = vv[size_t(rng.uniform_int(int(vv.size())))];
    }
    return c;
}

SampleRecord make_sample(const Dataset& ds, const StructuredCaption& cap, int request,
                         uint64_t seed = 1) {
    SampleRecord s;
    s.task = "gor";
    s.user = 0;
    s.request = request;
    s.seed = seed;
    s.caption = cap;
    s.latent = ds.encode_exact(cap);
    return s;
}

}  // namespace

TEST_CASE("quality: exact encodes score 1, random styles score near chance") {
    auto ds = small_world();
    Rng rng(1);
    std::vector<SampleRecord> exact;
    for (int i = 0; i < 50; ++i) {
        auto cap = random_caption(ds.schema, rng);
        auto s = make_sample(ds, cap, i);
        s.expected_style = cap.values[kStyleAttr];
        exact.push_back(s);
    }
    REQUIRE(eval_quality(exact, ds) == 1.0);

    std::vector<SampleRecord> noise;
    for (int i = 0; i < 400; ++i) {
        auto s = make_sample(ds, random_caption(ds.schema, rng), i);
        s.expected_style = "casual";  // uniform style matches ~1/5 of the time
        noise.push_back(s);
    }
    double q = eval_quality(noise, ds);
    REQUIRE(q == Catch::Approx(0.2).margin(0.06));

    REQUIRE_THROWS_AS(eval_quality({}, ds), EvalError);
    std::vector<SampleRecord> none = {make_sample(ds, random_caption(ds.schema, rng), 0)};
    REQUIRE_THROWS_AS(eval_quality(none, ds), EvalError);  // no expected style anywhere
}

TEST_CASE("compatibility: modal-style fraction per group, averaged") {
    StructuredCaption a{{"red", "denim", "plain", "casual"}};
    StructuredCaption b{{"blue", "wool", "plain", "casual"}};
    StructuredCaption c{{"green", "silk", "plain", "formal"}};
    REQUIRE(eval_compatibility({{a, b}}) == 1.0);
    REQUIRE(eval_compatibility({{a, b, c, c}}) == 0.5);
    REQUIRE(eval_compatibility({{a, b}, {a, c}}) == Catch::Approx(0.75));
    REQUIRE_THROWS_AS(eval_compatibility({}), EvalError);
}

TEST_CASE("personalization: identical history gives 1, random gives chance") {
    auto ds = small_world();
    // user 0: single-item history -> the preference profile is forced to
    // exactly that item's caption values
    StructuredCaption fixed{{"red", "wool", "striped", "formal"}};
    ds.items[0].caption = fixed;
    ds.users[0].history = {0};

    std::vector<SampleRecord> same;
    for (int i = 0; i < 20; ++i) {
        auto s = make_sample(ds, fixed, i, uint64_t(100 + i));
        same.push_back(s);
    }
    auto res = eval_personalization(same, ds);
    REQUIRE(res.mean == 1.0);
    REQUIRE(res.counted == 20);
    REQUIRE(res.flagged_empty == 0);

    Rng rng(2);
    std::vector<SampleRecord> random;
    for (int i = 0; i < 1000; ++i)
        random.push_back(make_sample(ds, random_caption(ds.schema, rng), i, uint64_t(i)));
    double chance = chance_levels(ds.schema).personalization;
    auto rr = eval_personalization(random, ds);
    REQUIRE(rr.mean == Catch::Approx(chance).margin(0.02));

    // empty-history users are flagged and excluded
    ds.users[1].history.clear();
    auto s_empty = make_sample(ds, fixed, 0);
    s_empty.user = 1;
    auto mixed = same;
    mixed.push_back(s_empty);
    auto mr = eval_personalization(mixed, ds);
    REQUIRE(mr.flagged_empty == 1);
    REQUIRE(mr.counted == 20);
    REQUIRE(mr.mean == 1.0);
    REQUIRE_THROWS_AS(eval_personalization({s_empty}, ds), EvalError);
}

TEST_CASE("diversity: degenerate and constructed cases") {
    auto ds = small_world();
    StructuredCaption cap{{"red", "denim", "plain", "casual"}};

    // identical samples: everything zero
    std::vector<SampleRecord> same;
    for (int i = 0; i < 5; ++i) same.push_back(make_sample(ds, cap, 0));
    auto d0 = eval_diversity(same);
    REQUIRE(d0.latent == 0.0);
    REQUIRE(d0.semantic == 0.0);
    REQUIRE(d0.entropy == 0.0);
    REQUIRE(d0.groups_counted == 1);

    // exactly uniform colors: mean entropy = ln(8)/4, the other three
    // attributes are constant
    std::vector<SampleRecord> colors;
    const auto& cvocab = ds.schema.value_vocab[0];
    for (int i = 0; i < 8 * 25; ++i) {
        StructuredCaption c = cap;
        c.values[0] = cvocab[size_t(i % 8)];
        colors.push_back(make_sample(ds, c, i));  // singleton groups
    }
    auto d1 = eval_diversity(colors);
    REQUIRE(d1.entropy == Catch::Approx(std::log(8.0) / 4.0).margin(1e-9));
    REQUIRE(d1.singleton_groups == 8 * 25);
    REQUIRE(d1.groups_counted == 0);
    REQUIRE(d1.latent == 0.0);

    // one group, two samples differing in 1 of 4 attributes; latents
    // offset by 1 everywhere -> normalized distance exactly 1
    StructuredCaption cap2 = cap;
    cap2.values[1] = "wool";
    auto s1 = make_sample(ds, cap, 7);
    auto s2 = make_sample(ds, cap2, 7);
    s2.latent = s1.latent;
    for (auto& x : s2.latent.data) x += 1.0f;
    auto d2 = eval_diversity({s1, s2});
    REQUIRE(d2.semantic == Catch::Approx(0.25));
    REQUIRE(d2.latent == Catch::Approx(1.0).margin(1e-6));

    REQUIRE_THROWS_AS(eval_diversity({}), EvalError);
}

TEST_CASE("alignment: exact encodes agree fully, constructed mismatch scores 0.5") {
    auto ds = small_world();
    Rng rng(3);
    std::vector<SampleRecord> exact;
    for (int i = 0; i < 30; ++i)
        exact.push_back(make_sample(ds, random_caption(ds.schema, rng), i));
    auto a = eval_alignment(exact, ds);
    REQUIRE(a.mean == 1.0);
    for (int k = 0; k < kNumAttributes; ++k) REQUIRE(a.per_attribute[size_t(k)] == 1.0);

    // caption disagrees with the latent's decode on exactly 2 attributes
    StructuredCaption enc{{"red", "denim", "plain", "casual"}};
    StructuredCaption said = enc;
    said.values[0] = "blue";
    said.values[3] = "formal";
    auto s = make_sample(ds, enc, 0);
    s.caption = said;
    auto b = eval_alignment({s}, ds);
    REQUIRE(b.mean == Catch::Approx(0.5));
    REQUIRE(b.per_attribute[0] == 0.0);
    REQUIRE(b.per_attribute[1] == 1.0);
    REQUIRE(b.per_attribute[2] == 1.0);
    REQUIRE(b.per_attribute[3] == 0.0);
}

TEST_CASE("chance levels match the schema arithmetic") {
    auto schema = AttributeSchema::defaults();
    auto c = chance_levels(schema);
    REQUIRE(c.quality == Catch::Approx(1.0 / 5.0));
    double expect = (1.0 / 8 + 1.0 / 6 + 1.0 / 8 + 1.0 / 5) / 4.0;
    REQUIRE(c.personalization == Catch::Approx(expect));
    REQUIRE(c.alignment == Catch::Approx(expect));
}

TEST_CASE("evaluate: full report, PFITB groups extend with the outfit") {
    auto ds = small_world();
    // single-item histories so personalization is well defined
    for (auto& u : ds.users)
        if (u.history.empty()) u.history = {0};

    Rng rng(4);
    std::vector<SampleRecord> samples;
    for (int r = 0; r < 6; ++r) {
        const Outfit& of = ds.outfits[size_t(r)];
        auto cap = random_caption(ds.schema, rng);
        auto s = make_sample(ds, cap, r, uint64_t(50 + r));
        s.task = "pfitb";
        s.user = of.owner;
        s.outfit = of.id;
        s.category = ds.item(of.item_ids[size_t(of.held_out)]).category;
        s.expected_style = of.style;
        samples.push_back(s);
    }
    auto rep = evaluate(samples, ds, true);

    auto find = [&](const std::string& task, const std::string& metric) -> const EvalReport::Row* {
        for (const auto& r : rep.rows)
            if (r.task == task && r.metric == metric) return &r;
        return nullptr;
    };
    for (const char* m : {"quality", "compatibility", "personalization", "diversity_latent",
                          "attribute_entropy", "semantic_distance", "alignment"})
        REQUIRE(find("pfitb", m) != nullptr);
    REQUIRE(find("baseline", "quality") != nullptr);
    REQUIRE(find("pfitb", "alignment")->value == 1.0);  // exact encodes

    // compatibility must include the rest of each outfit, not just the
    // single generated caption
    double manual = 0;
    for (const auto& s : samples) {
        const Outfit& of = ds.outfit(s.outfit);
        std::vector<StructuredCaption> group = {s.caption};
        for (size_t j = 0; j < of.item_ids.size(); ++j)
            if (int(j) != of.held_out) group.push_back(ds.item(of.item_ids[j]).caption);
        manual += oracle_compatibility(group);
    }
    manual /= double(samples.size());
    REQUIRE(find("pfitb", "compatibility")->value == Catch::Approx(manual));

    // order invariance
    auto shuffled = samples;
    std::mt19937 mt(9);
    std::shuffle(shuffled.begin(), shuffled.end(), mt);
    auto rep2 = evaluate(shuffled, ds, true);
    REQUIRE(rep.rows.size() == rep2.rows.size());
    for (const auto& r : rep.rows) {
        const EvalReport::Row* other = nullptr;
        for (const auto& r2 : rep2.rows)
            if (r2.task == r.task && r2.metric == r.metric) other = &r2;
        REQUIRE(other != nullptr);
        REQUIRE(other->value == Catch::Approx(r.value).margin(1e-12));
        REQUIRE(other->count == r.count);
    }

    // report formats
    REQUIRE(rep.to_csv().rfind("task,metric,value,count\n", 0) == 0);
    REQUIRE(rep.summary().find("oracle") != std::string::npos);
}
