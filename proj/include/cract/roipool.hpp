#pragma once

#include <vector>

#include "cract/geometry.hpp"
#include "cract/tensor.hpp"

namespace cract {

enum class PoolKind { Plain, PyramidFused };

// Fixed-size S x S pooled feature, tagged with the box it was pooled at so the
// cascade contract (classify features pooled at the regressed box) can be
// asserted downstream.
struct PooledFeature {
    int channels = 0;
    int size = 0;
    PoolKind kind = PoolKind::Plain;
    Box source_box;
    std::vector<float> data;  // channels * size * size, row-major

    PooledFeature() = default;
    PooledFeature(int c, int s, PoolKind k, const Box& box);

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * size + y) * size + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * size + y) * size + x]; }
    void validate() const;
};

struct PyramidParams {
    std::vector<int> levels = {6, 3, 1};   // strictly decreasing output sizes
    DenseLayerParams fusion;               // 1x1 conv, levels*C -> C
    int samples_per_bin = 2;

    static PyramidParams make_default(int channels, std::vector<int> levels = {6, 3, 1});
    void validate() const;
};

// RoIAlign: the box (image coordinates) is divided by fmap.stride into feature
// coordinates and split into S x S bins; each bin averages samples_per_bin^2
// bilinear samples at regular sub-bin centers. Out-of-bounds samples read 0.
PooledFeature roialign(const FeatureMap& fmap, const Box& box, int out_size, int samples_per_bin);

// RoIAlign at every pyramid level, smaller grids upsampled to the largest,
// channel-concatenated in level order and fused by the 1x1 conv.
PooledFeature pyramid_roialign(const FeatureMap& fmap, const Box& box, const PyramidParams& params);

}  // namespace cract
