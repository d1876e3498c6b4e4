#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cract/geometry.hpp"
#include "cract/tensor.hpp"

namespace cract {

// Grayscale or RGB image with float pixels in [0, 1], channel-major.
struct ImagePatch {
    int channels = 1;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    ImagePatch() = default;
    ImagePatch(int c, int h, int w, float fill = 0.0f);

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    void validate() const;
    float mean() const;
};

// Similarity mapping between image coordinates and crop-patch coordinates:
// patch = (image - origin) * scale.
struct AffineMap {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double scale = 1.0;

    Box to_patch(const Box& image_box) const;
    Box to_image(const Box& patch_box) const;
};

struct CropResult {
    ImagePatch patch;
    AffineMap map;
};

enum class BackboneMode { Handcrafted, SeededRandomConv };

struct BackboneParams {
    BackboneMode mode = BackboneMode::Handcrafted;
    int channels_per_level = 8;
    DenseLayerParams fusion;  // 1x1 conv over [phi3_resized ; phi4]
    uint64_t seed = 1;

    // Handcrafted default: 8 channels per level, fusion averages matching
    // phi3/phi4 channel pairs so the fused map keeps feature semantics
    // without training.
    static BackboneParams make_default(uint64_t seed);
    static BackboneParams make_random_conv(uint64_t seed, int channels = 8);
    void validate() const;
};

// Crops a square of side context*sqrt(w*h) centered on the box, pads
// out-of-image samples with the image mean, resizes to out_size x out_size.
CropResult crop_region(const ImagePatch& image, const Box& box, double context, int out_size);

// Two-level features: phi3 at stride 8, phi4 at stride 16.
std::pair<FeatureMap, FeatureMap> extract_features(const ImagePatch& patch,
                                                   const BackboneParams& params);

// phi3 resized to phi4's grid, concatenated [phi3 ; phi4], fused by 1x1 conv.
FeatureMap fuse_features(const FeatureMap& phi3, const FeatureMap& phi4,
                         const BackboneParams& params);

FeatureMap extract_fused(const ImagePatch& patch, const BackboneParams& params);

// 8-bit binary PGM (P5) / PPM (P6) mapped to [0, 1].
ImagePatch read_image(const std::string& path);
void write_image(const std::string& path, const ImagePatch& image);

}  // namespace cract
