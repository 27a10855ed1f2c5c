#include <catch2/catch_amalgamated.hpp>

#include "dualrec/rng.hpp"
#include "dualrec/schedules.hpp"

using namespace dualrec;

TEST_CASE("rectified-linear endpoints and identity") {
    ContinuousSchedule s;
    auto [a0, s0] = s.alpha_sigma(0.0);
    REQUIRE(a0 == 1.0);
    REQUIRE(s0 == 0.0);
    auto [a1, s1] = s.alpha_sigma(1.0);
    REQUIRE(a1 == 0.0);
    REQUIRE(s1 == 1.0);
    auto [a, sg] = s.alpha_sigma(0.3);
    REQUIRE(a == Catch::Approx(0.7).margin(1e-15));
    REQUIRE(sg == 0.3);
    for (int i = 0; i <= 1000; ++i) {
        double t = double(i) / 1000.0;
        auto [al, si] = s.alpha_sigma(t);
        REQUIRE(std::abs(al + si - 1.0) <= 1e-12);
    }
    REQUIRE_THROWS_AS(s.alpha_sigma(-0.1), std::domain_error);
    REQUIRE_THROWS_AS(s.alpha_sigma(1.1), std::domain_error);
}

TEST_CASE("add_noise endpoints and midpoint") {
    Latentd z0(1, 1, 2), eps(1, 1, 2);
    z0.data = {2.0, 0.0};
    eps.data = {0.0, 2.0};
    auto a = add_noise(z0, eps, 0.0);
    REQUIRE(a.data == z0.data);
    auto b = add_noise(z0, eps, 1.0);
    REQUIRE(b.data == eps.data);
    auto m = add_noise(z0, eps, 0.5);
    REQUIRE(m.data[0] == 1.0);
    REQUIRE(m.data[1] == 1.0);
    Latentd bad(1, 1, 3);
    REQUIRE_THROWS_AS(add_noise(z0, bad, 0.5), std::invalid_argument);
}

TEST_CASE("velocity target") {
    Latentd z0(1, 1, 2), eps(1, 1, 2);
    z0.data = {1.0, 1.0};
    eps.data = {0.0, 0.0};
    auto v = velocity_target(z0, eps);
    REQUIRE(v.data[0] == -1.0);
    REQUIRE(v.data[1] == -1.0);
    auto z = velocity_target(z0, z0);
    REQUIRE(z.data[0] == 0.0);
}

TEST_CASE("path derivative equals velocity target (finite difference)") {
    Rng rng(9);
    Latentd z0(2, 3, 3), eps(2, 3, 3);
    for (auto& x : z0.data) x = rng.normal();
    for (auto& x : eps.data) x = rng.normal();
    auto v = velocity_target(z0, eps);
    const double h = 0.125;  // exact for the linear path
    for (double t : {0.125, 0.5, 0.75}) {
        auto zt = add_noise(z0, eps, t);
        auto zth = add_noise(z0, eps, t + h);
        for (size_t i = 0; i < zt.size(); ++i)
            REQUIRE(std::abs(zth.data[i] - zt.data[i] - h * v.data[i]) <= 1e-12);
    }
}

TEST_CASE("stratified times") {
    auto one = stratified_times(1, 0.0);
    REQUIRE(one.size() == 1);
    REQUIRE(one[0] == 1.0);
    auto four = stratified_times(4, 0.5);
    REQUIRE(four == std::vector<double>{0.125, 0.375, 0.625, 0.875});
    auto clamped = stratified_times(4, 0.9999, 1e-3);
    REQUIRE(clamped[0] >= 1e-3);
    REQUIRE_THROWS_AS(stratified_times(0, 0.5), std::domain_error);
}

TEST_CASE("stratified times are increasing and stratum-bounded") {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        int k = 1 + rng.uniform_int(8);
        double u = rng.uniform();
        auto ts = stratified_times(k, u, 0.0);
        for (int i = 0; i < k; ++i) {
            if (i) REQUIRE(ts[size_t(i)] > ts[size_t(i - 1)]);
            REQUIRE(ts[size_t(i)] > double(i) / k);
            REQUIRE(ts[size_t(i)] <= double(i + 1) / k);
        }
        // mask_prob composed with the list is nondecreasing
        DiscreteSchedule d;
        for (int i = 1; i < k; ++i)
            REQUIRE(d.mask_prob(ts[size_t(i)]) >= d.mask_prob(ts[size_t(i - 1)]));
    }
}
