#include <doctest.h>

#include <stdexcept>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cract/oracles.hpp"
#include "cract/tensor.hpp"

using namespace cract;

namespace {

FeatureMap random_map(Rng* rng, int c, int h, int w, float stride = 8.0f) {
    FeatureMap m(c, h, w, stride);
    for (float& v : m.data) v = static_cast<float>(rng->uniform(-1.0, 1.0));
    return m;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("conv2d identity kernel returns input") {
    FeatureMap in(1, 3, 3, 8.0f);
    for (int i = 0; i < 9; ++i) in.data[i] = static_cast<float>(i + 1);
    DenseLayerParams p = DenseLayerParams::conv(1, 1, 1, 1, 1, 0);
    p.weights[0] = 1.0f;
    FeatureMap out = conv2d(in, p);
    CHECK(out.channels == 1);
    CHECK(out.height == 3);
    CHECK(out.width == 3);
    for (int i = 0; i < 9; ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    FeatureMap in(1, 3, 3, 8.0f);
    std::fill(in.data.begin(), in.data.end(), 1.0f);
    DenseLayerParams p = DenseLayerParams::conv(1, 1, 3, 3, 1, 0);
    std::fill(p.weights.begin(), p.weights.end(), 1.0f);
    FeatureMap out = conv2d(in, p);
    CHECK(out.height == 1);
    CHECK(out.width == 1);
    CHECK(out.data[0] == doctest::Approx(9.0).epsilon(1e-9));
}

TEST_CASE("conv2d matches naive oracle on random 4x8x8 inputs") {
    Rng rng(42);
    for (int n = 0; n < 20; ++n) {
        FeatureMap in = random_map(&rng, 4, 8, 8);
        DenseLayerParams p = DenseLayerParams::conv(4, 3, 3, 3, 1, 1);
        for (float& v : p.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (float& v : p.bias) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        FeatureMap got = conv2d(in, p);
        FeatureMap ref = oracle::conv2d_naive(in, p);
        for (size_t i = 0; i < ref.data.size(); ++i) {
            CHECK(std::abs(got.data[i] - ref.data[i]) <= 1e-6);
        }
    }
}

TEST_CASE("conv2d stride bookkeeping and shape errors") {
    FeatureMap in(2, 4, 4, 8.0f);
    DenseLayerParams p = DenseLayerParams::conv(2, 1, 2, 2, 2, 0);
    FeatureMap out = conv2d(in, p);
    CHECK(out.stride == doctest::Approx(16.0f));
    CHECK(out.height == 2);

    DenseLayerParams wrong = DenseLayerParams::conv(3, 1, 2, 2, 1, 0);
    CHECK_THROWS_WITH_AS(conv2d(in, wrong), doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("fully_connected identity and forced arithmetic") {
    DenseLayerParams id = DenseLayerParams::fully_connected(3, 3);
    for (int i = 0; i < 3; ++i) id.weights[i * 3 + i] = 1.0f;
    std::vector<float> x = {0.5f, -1.0f, 2.0f};
    CHECK(fully_connected(x, id) == x);

    DenseLayerParams p = DenseLayerParams::fully_connected(2, 1);
    p.weights = {1.0f, 1.0f};
    std::vector<float> y = fully_connected({2.0f, 3.0f}, p);
    CHECK(y[0] == doctest::Approx(5.0));

    CHECK_THROWS_AS(fully_connected({1.0f}, p), std::invalid_argument);
}

TEST_CASE("fully_connected matches naive oracle on random 16->4 layers") {
    Rng rng(7);
    for (int n = 0; n < 50; ++n) {
        DenseLayerParams p = DenseLayerParams::fully_connected(16, 4);
        for (float& v : p.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (float& v : p.bias) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        std::vector<float> x(16);
        for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        std::vector<float> got = fully_connected(x, p);
        std::vector<float> ref = oracle::fully_connected_naive(x, p);
        for (int i = 0; i < 4; ++i) CHECK(std::abs(got[i] - ref[i]) <= 1e-6);
    }
}

TEST_CASE("resize_bilinear identity and constant cases") {
    Rng rng(3);
    FeatureMap in = random_map(&rng, 2, 5, 7);
    FeatureMap same = resize_bilinear(in, 5, 7);
    for (size_t i = 0; i < in.data.size(); ++i) CHECK(same.data[i] == doctest::Approx(in.data[i]));

    FeatureMap constant(1, 3, 3, 8.0f, 0.75f);
    FeatureMap big = resize_bilinear(constant, 9, 5);
    for (float v : big.data) CHECK(v == doctest::Approx(0.75f));
}

TEST_CASE("resize_bilinear 2x2 -> 4x4 matches hand-rolled oracle values") {
    FeatureMap in(1, 2, 2, 8.0f);
    in.data = {1.0f, 2.0f, 3.0f, 4.0f};
    FeatureMap out = resize_bilinear(in, 4, 4);
    // frozen from the scalar align-corners-false oracle
    const float expected[16] = {1.0f, 1.25f, 1.75f, 2.0f,  1.5f, 1.75f, 2.25f, 2.5f,
                                2.5f, 2.75f, 3.25f, 3.5f, 3.0f, 3.25f, 3.75f, 4.0f};
    FeatureMap ref = oracle::resize_bilinear_naive(in, 4, 4);
    for (int i = 0; i < 16; ++i) {
        CHECK(std::abs(out.data[i] - expected[i]) <= 1e-6);
        CHECK(std::abs(ref.data[i] - expected[i]) <= 1e-6);
    }
}

TEST_CASE("concat_channels layout and round trip") {
    Rng rng(11);
    FeatureMap a = random_map(&rng, 3, 4, 4);
    FeatureMap b = random_map(&rng, 5, 4, 4);
    FeatureMap cat = concat_channels(a, b);
    CHECK(cat.channels == 8);
    CHECK(cat.height == 4);

    FeatureMap dup = concat_channels(a, a);
    CHECK(dup.channels == 6);
    FeatureMap front = slice_channels(dup, 0, 3);
    CHECK(front.data == a.data);
    FeatureMap back = slice_channels(cat, 3, 5);
    CHECK(back.data == b.data);

    FeatureMap small = random_map(&rng, 1, 3, 4);
    CHECK_THROWS_AS(concat_channels(a, small), std::invalid_argument);
    FeatureMap other_stride = random_map(&rng, 1, 4, 4, 16.0f);
    CHECK_THROWS_AS(concat_channels(a, other_stride), std::invalid_argument);
}

TEST_CASE("fmap round trip is bit exact") {
    Rng rng(99);
    FeatureMap m = random_map(&rng, 3, 5, 4, 16.0f);
    std::string path = temp_path("cract_test_roundtrip.fmap");
    write_fmap(path, m);
    FeatureMap back = read_fmap(path);
    CHECK(back.channels == m.channels);
    CHECK(back.height == m.height);
    CHECK(back.width == m.width);
    CHECK(back.stride == m.stride);
    CHECK(back.data == m.data);
    std::remove(path.c_str());
}

TEST_CASE("fmap format errors are distinct") {
    std::string path = temp_path("cract_test_bad.fmap");

    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_WITH_AS(read_fmap(path), doctest::Contains("bad magic"), std::runtime_error);

    {
        // valid header for 2x2x2 but only 7 payload floats
        FeatureMap m(2, 2, 2, 4.0f, 1.0f);
        write_fmap(path, m);
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    }
    CHECK_THROWS_WITH_AS(read_fmap(path), doctest::Contains("truncated payload"),
                         std::runtime_error);

    {
        std::ofstream f(path, std::ios::binary);
        unsigned char header[] = {'F', 'M', 'A', 'P', 1, 0, 0, 0, 3, 0, 0, 0,
                                  255, 255, 255, 255, 255, 255, 255, 255, 2, 0, 0, 0};
        f.write(reinterpret_cast<char*>(header), sizeof(header));
    }
    CHECK_THROWS_WITH_AS(read_fmap(path), doctest::Contains("dim overflow"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("rng streams are reproducible and forked streams differ") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(1234);
    Rng f1 = c.fork(1), f2 = c.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());

    Rng d(1234), e(1234);
    for (int i = 0; i < 100; ++i) {
        CHECK(d.normal() == e.normal());
        double u = d.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == e.uniform());
    }
}

TEST_CASE("operations reject non-finite outputs") {
    FeatureMap in(1, 2, 2, 8.0f, 1e38f);
    DenseLayerParams p = DenseLayerParams::conv(1, 1, 2, 2, 1, 0);
    std::fill(p.weights.begin(), p.weights.end(), 1e38f);
    CHECK_THROWS_WITH_AS(conv2d(in, p), doctest::Contains("non-finite"), std::runtime_error);
}
