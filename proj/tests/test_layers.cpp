#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fpan/layers.hpp"
#include "fpan/training.hpp"
#include "testutil.hpp"

using namespace fpan;

TEST_CASE("init_he: all samples lie within the fan-in bound") {
    TensorD w({4, 8, 3, 3});
    init_he_seeded(w, 123);
    const double bound = std::sqrt(6.0 / (8 * 3 * 3));
    for (double v : w.data()) {
        CHECK(v >= -bound);
        CHECK(v <= bound);
    }
}

TEST_CASE("init_he: deterministic under a fixed seed") {
    TensorD a({4, 4, 3, 3}), b({4, 4, 3, 3}), c({4, 4, 3, 3});
    init_he_seeded(a, 7);
    init_he_seeded(b, 7);
    init_he_seeded(c, 8);
    CHECK(testutil::bitwise_equal(a, b));
    CHECK_FALSE(testutil::bitwise_equal(a, c));
}

TEST_CASE("init_he: empirical variance matches the uniform moment") {
    // 10^5 samples of a uniform [-b,b] should have variance b^2/3 within 5%.
    TensorD w({10, 100, 10, 10});
    init_he_seeded(w, 99);
    const double bound = std::sqrt(6.0 / (100 * 10 * 10));
    double mean = 0.0;
    for (double v : w.data()) mean += v;
    mean /= static_cast<double>(w.numel());
    double var = 0.0;
    for (double v : w.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.numel());
    const double expected = bound * bound / 3.0;
    CHECK(std::abs(var - expected) / expected < 0.05);
}

TEST_CASE("init_zero: every element is zero") {
    TensorD w = TensorD::full({3, 2, 3, 3}, 1.0);
    init_zero(w);
    for (double v : w.data()) CHECK(v == 0.0);
}

TEST_CASE("ParameterStore: duplicate names are rejected") {
    ParameterStore<float> store;
    store.add("conv.weight", TensorF({2, 2, 3, 3}));
    CHECK_THROWS_AS(store.add("conv.weight", TensorF({1, 1, 1, 1})), UsageError);
}

TEST_CASE("ParameterStore: iteration preserves insertion order and counts elements") {
    ParameterStore<float> store;
    store.add("b", TensorF({1, 1, 2, 2}));
    store.add("a", TensorF({1, 1, 3, 1}));
    store.add("c", TensorF({2, 1, 1, 1}));
    REQUIRE(store.size() == 3);
    CHECK(store.entries()[0].name == "b");
    CHECK(store.entries()[1].name == "a");
    CHECK(store.entries()[2].name == "c");
    CHECK(store.total_params() == 4 + 3 + 2);
}

TEST_CASE("ConvLayer: registration, padding rules and zero bias") {
    ParameterStore<double> store;
    std::mt19937 rng(1);
    ConvLayer<double> c3(store, "c3", 8, 4, 3, 1, rng);
    CHECK(c3.pad == 1);
    ConvLayer<double> c1(store, "c1", 8, 4, 1, 1, rng);
    CHECK(c1.pad == 0);
    ConvLayer<double> c6(store, "c6", 8, 8, 6, 2, rng);
    CHECK(c6.pad == 2);
    CHECK(store.contains("c3.weight"));
    CHECK(store.contains("c3.bias"));
    for (double v : c3.bias.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(ConvLayer<double>(store, "bad", 8, 4, 4, 1, rng), UsageError);
    CHECK_THROWS_AS(ConvLayer<double>(store, "bad2", 8, 4, 3, 3, rng), UsageError);
}

TEST_CASE("zero-initialized layer leaves zero after construction, moves after Adam") {
    ParameterStore<double> store;
    std::mt19937 rng(5);
    ConvLayer<double> fuse(store, "fuse", 4, 4, 1, 1, rng, /*zero_init=*/true);
    for (double v : fuse.weight.data()) CHECK(v == 0.0);

    // One optimizer step against a real gradient moves the weights off zero.
    TensorD x({1, 4, 3, 3});
    testutil::fill_uniform(x, rng, 0.5, 1.0);
    TapeD tape;
    TensorD y = fuse.forward(&tape, x);
    tape.backward(sum_all(&tape, y));
    adam_step(store, 0.01, 1);
    bool any_nonzero = false;
    for (double v : fuse.weight.data()) any_nonzero |= (v != 0.0);
    CHECK(any_nonzero);
}
