#include <catch2/catch_amalgamated.hpp>

#include "dualrec/base64.hpp"
#include "dualrec/rng.hpp"

using namespace dualrec;

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(42, 0), b(42, 0), c(42, 1);
    REQUIRE(a.next_u64() == b.next_u64());
    Rng a2(42, 0);
    REQUIRE(a2.next_u64() != c.next_u64());
}

TEST_CASE("uniform stays in [0,1)") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("normal has roughly unit moments") {
    Rng r(3);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        s += x;
        s2 += x * x;
    }
    REQUIRE(std::abs(s / n) < 0.02);
    REQUIRE(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("categorical matches probabilities") {
    Rng r(11);
    std::vector<double> p = {0.2, 0.5, 0.3};
    std::vector<int> counts(3, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[size_t(r.categorical(p))];
    for (int k = 0; k < 3; ++k) REQUIRE(std::abs(double(counts[size_t(k)]) / n - p[size_t(k)]) < 0.01);
}

TEST_CASE("base64 float round trip is exact") {
    Rng r(5);
    std::vector<float> v(97);
    for (auto& x : v) x = float(r.normal());
    auto s = floats_to_base64(v);
    auto back = base64_to_floats(s);
    REQUIRE(back.size() == v.size());
    for (size_t i = 0; i < v.size(); ++i) REQUIRE(back[i] == v[i]);
}

TEST_CASE("base64 handles padding lengths") {
    for (size_t n : {0u, 1u, 2u, 3u, 4u, 5u}) {
        std::vector<uint8_t> bytes(n);
        for (size_t i = 0; i < n; ++i) bytes[i] = uint8_t(17 * i + 3);
        auto enc = base64_encode(bytes.data(), bytes.size());
        auto dec = base64_decode(enc);
        REQUIRE(dec == bytes);
    }
}
