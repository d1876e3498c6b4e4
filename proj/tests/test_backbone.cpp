#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "cract/backbone.hpp"

using namespace cract;

namespace {

// deterministic texture function so translated patches can be generated exactly
float tex(int x, int y) {
    return 0.5f + 0.25f * std::sin(0.37f * x) * std::cos(0.23f * y) +
           0.2f * ((x / 5 + y / 7) % 2 == 0 ? 1.0f : -1.0f) * 0.5f;
}

ImagePatch textured_patch(int size, int x_shift) {
    ImagePatch p(1, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) p.at(0, y, x) = tex(x + x_shift, y);
    }
    return p;
}

}  // namespace

TEST_CASE("crop_region of a uniform image is uniform") {
    ImagePatch img(1, 64, 64, 0.4f);
    CropResult crop = crop_region(img, Box(32, 32, 16, 16), 2.0, 64);
    for (float v : crop.patch.data) CHECK(v == doctest::Approx(0.4f));
}

TEST_CASE("crop_region pads outside area with the image mean") {
    ImagePatch img(1, 64, 64, 0.8f);
    // corner box: most of the crop square lies off-image
    CropResult crop = crop_region(img, Box(2, 2, 16, 16), 4.0, 64);
    // top-left patch corner maps far outside the image
    CHECK(crop.patch.at(0, 0, 0) == doctest::Approx(0.8f));
    CHECK(crop.patch.at(0, 0, 63) == doctest::Approx(0.8f));
}

TEST_CASE("crop_region mapping back-projects boxes exactly") {
    ImagePatch img(1, 96, 128, 0.5f);
    Box box(40.5, 33.25, 20.0, 14.0);
    CropResult crop = crop_region(img, box, 2.0, 64);
    Box patch_box = crop.map.to_patch(box);
    Box back = crop.map.to_image(patch_box);
    CHECK(std::abs(back.cx - box.cx) <= 1e-6);
    CHECK(std::abs(back.cy - box.cy) <= 1e-6);
    CHECK(std::abs(back.w - box.w) <= 1e-6);
    CHECK(std::abs(back.h - box.h) <= 1e-6);

    CHECK_THROWS_AS(crop_region(img, Box(1, 1, -2, 4), 2.0, 64), std::invalid_argument);
    CHECK_THROWS_AS(crop_region(img, box, 2.0, 60), std::invalid_argument);
}

TEST_CASE("handcrafted features: uniform patch has zero gradient channels") {
    ImagePatch patch(1, 64, 64, 0.37f);
    BackboneParams params = BackboneParams::make_default(1);
    auto [phi3, phi4] = extract_features(patch, params);
    CHECK(phi3.stride == doctest::Approx(8.0f));
    CHECK(phi4.stride == doctest::Approx(16.0f));
    for (int c = 1; c < 8; ++c) {
        for (int y = 0; y < phi3.height; ++y) {
            for (int x = 0; x < phi3.width; ++x) {
                CHECK(phi3.at(c, y, x) == 0.0f);
            }
        }
    }
    // mean-intensity channel carries the constant
    CHECK(phi3.at(0, 0, 0) == doctest::Approx(0.37f));
}

TEST_CASE("feature grid sizes follow the strides") {
    ImagePatch patch(1, 128, 128, 0.2f);
    BackboneParams params = BackboneParams::make_default(1);
    auto [phi3, phi4] = extract_features(patch, params);
    CHECK(phi3.height == 16);
    CHECK(phi3.width == 16);
    CHECK(phi4.height == 8);
    CHECK(phi4.width == 8);

    ImagePatch odd(1, 120, 128, 0.2f);
    CHECK_THROWS_AS(extract_features(odd, params), std::invalid_argument);
}

TEST_CASE("translating a texture by 16 px shifts phi4 by one cell") {
    BackboneParams params = BackboneParams::make_default(1);
    ImagePatch a = textured_patch(128, 0);
    ImagePatch b = textured_patch(128, 16);
    FeatureMap phi4_a = extract_features(a, params).second;
    FeatureMap phi4_b = extract_features(b, params).second;
    // interior cells are bit-equal: cell (i, j) of b matches cell (i, j+1) of a
    for (int c = 0; c < 8; ++c) {
        for (int i = 0; i < 8; ++i) {
            for (int j = 1; j <= 5; ++j) {
                CHECK(phi4_b.at(c, i, j) == phi4_a.at(c, i, j + 1));
            }
        }
    }
}

TEST_CASE("handcrafted features are deterministic and shift-invariant except intensity") {
    BackboneParams params = BackboneParams::make_default(1);
    ImagePatch a = textured_patch(64, 3);
    auto [p3a, p4a] = extract_features(a, params);
    auto [p3b, p4b] = extract_features(a, params);
    CHECK(p3a.data == p3b.data);
    CHECK(p4a.data == p4b.data);

    ImagePatch shifted = a;
    for (float& v : shifted.data) v += 0.125f;
    auto [p3s, p4s] = extract_features(shifted, params);
    for (int c = 1; c < 8; ++c) {
        for (int y = 0; y < p3a.height; ++y) {
            for (int x = 0; x < p3a.width; ++x) {
                CHECK(std::abs(p3s.at(c, y, x) - p3a.at(c, y, x)) <= 1e-6);
            }
        }
    }
    CHECK(p3s.at(0, 2, 2) == doctest::Approx(p3a.at(0, 2, 2) + 0.125f));
}

TEST_CASE("fuse_features identity conv exposes resized phi3 in the first channels") {
    BackboneParams params = BackboneParams::make_default(1);
    ImagePatch patch = textured_patch(128, 0);
    auto [phi3, phi4] = extract_features(patch, params);

    BackboneParams identity = params;
    identity.channels_per_level = 8;
    identity.fusion = DenseLayerParams::conv(16, 16, 1, 1, 1, 0);
    for (int o = 0; o < 16; ++o) identity.fusion.weights[o * 16 + o] = 1.0f;
    FeatureMap fused = fuse_features(phi3, phi4, identity);
    CHECK(fused.channels == 16);
    CHECK(fused.height == phi4.height);
    CHECK(fused.width == phi4.width);
    CHECK(fused.stride == doctest::Approx(16.0f));

    FeatureMap phi3r = resize_bilinear(phi3, phi4.height, phi4.width);
    for (int c = 0; c < 8; ++c) {
        for (int y = 0; y < fused.height; ++y) {
            for (int x = 0; x < fused.width; ++x) {
                CHECK(fused.at(c, y, x) == doctest::Approx(phi3r.at(c, y, x)).epsilon(1e-6));
            }
        }
    }

    BackboneParams wrong = params;
    wrong.fusion = DenseLayerParams::conv(10, 8, 1, 1, 1, 0);
    CHECK_THROWS_AS(fuse_features(phi3, phi4, wrong), std::invalid_argument);
}

TEST_CASE("fused map of a uniform patch is spatially constant") {
    BackboneParams params = BackboneParams::make_default(1);
    ImagePatch patch(1, 128, 128, 0.61f);
    FeatureMap fused = extract_fused(patch, params);
    CHECK(fused.channels == 8);
    for (int c = 0; c < fused.channels; ++c) {
        float first = fused.at(c, 0, 0);
        for (int y = 0; y < fused.height; ++y) {
            for (int x = 0; x < fused.width; ++x) {
                CHECK(fused.at(c, y, x) == doctest::Approx(first).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("seeded random conv backbone is deterministic with the right strides") {
    BackboneParams params = BackboneParams::make_random_conv(77);
    ImagePatch patch = textured_patch(128, 0);
    auto [p3a, p4a] = extract_features(patch, params);
    auto [p3b, p4b] = extract_features(patch, params);
    CHECK(p3a.data == p3b.data);
    CHECK(p4a.data == p4b.data);
    CHECK(p3a.stride == doctest::Approx(8.0f));
    CHECK(p4a.stride == doctest::Approx(16.0f));
    CHECK(p3a.height == 16);
    CHECK(p4a.height == 8);
    FeatureMap fused = fuse_features(p3a, p4a, params);
    CHECK(fused.channels == 8);
}

TEST_CASE("pgm and ppm round trips") {
    namespace fs = std::filesystem;
    std::string pgm = (fs::temp_directory_path() / "cract_test.pgm").string();
    std::string ppm = (fs::temp_directory_path() / "cract_test.ppm").string();

    ImagePatch gray = textured_patch(32, 0);
    write_image(pgm, gray);
    ImagePatch gray_back = read_image(pgm);
    CHECK(gray_back.channels == 1);
    CHECK(gray_back.height == 32);
    double worst = 0.0;
    for (size_t i = 0; i < gray.data.size(); ++i) {
        worst = std::max(worst, std::abs((double)gray.data[i] - gray_back.data[i]));
    }
    CHECK(worst <= 0.5 / 255.0 + 1e-6);  // 8-bit quantization

    ImagePatch rgb(3, 8, 8, 0.0f);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 64; ++i) rgb.data[c * 64 + i] = (c + 1) * 0.25f;
    }
    write_image(ppm, rgb);
    ImagePatch rgb_back = read_image(ppm);
    CHECK(rgb_back.channels == 3);
    CHECK(rgb_back.at(1, 4, 4) == doctest::Approx(0.5f).epsilon(0.01));

    std::remove(pgm.c_str());
    std::remove(ppm.c_str());
}
