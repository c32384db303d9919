#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cp4vlm/rng.hpp"

#include <algorithm>
#include <numeric>

using cp4vlm::Pcg32;

TEST_CASE("pcg32 matches the reference demo stream") {
    // pcg32-demo: pcg32_srandom_r(&rng, 42u, 54u)
    Pcg32 rng(42u, 54u);
    const std::uint32_t expected[] = {0xa15c02b7, 0x7b47f409, 0xba1d3330, 0x83d2f293, 0xbfa4784b, 0xcbed606e};
    for (std::uint32_t e : expected) CHECK(rng.next_u32() == e);
}

TEST_CASE("bounded draws stay in range and hit every value") {
    Pcg32 rng(7, 1);
    std::vector<int> seen(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto r = rng.bounded(7);
        REQUIRE(r < 7u);
        ++seen[r];
    }
    for (int c : seen) CHECK(c > 800);
}

TEST_CASE("uniform and normal draws have the right moments") {
    Pcg32 rng(123, 9);
    double su = 0, sn = 0, sn2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("shuffle is a seed-determined permutation") {
    std::vector<int> a(50), b;
    std::iota(a.begin(), a.end(), 0);
    b = a;
    Pcg32 r1(5, 3), r2(5, 3);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);

    std::vector<int> c(50);
    std::iota(c.begin(), c.end(), 0);
    Pcg32 r3(6, 3);
    r3.shuffle(c);
    CHECK(c != a);
}
