#include "cract/roipool.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cract {

PooledFeature::PooledFeature(int c, int s, PoolKind k, const Box& box)
    : channels(c), size(s), kind(k), source_box(box),
      data(static_cast<size_t>(c) * s * s, 0.0f) {}

void PooledFeature::validate() const {
    if (channels < 1 || size < 1) throw std::invalid_argument("PooledFeature: dims must be >= 1");
    if (data.size() != static_cast<size_t>(channels) * size * size) {
        throw std::invalid_argument("PooledFeature: data length does not match dims");
    }
    for (float v : data) {
        if (!std::isfinite(v)) throw std::invalid_argument("PooledFeature: non-finite value");
    }
}

PyramidParams PyramidParams::make_default(int channels, std::vector<int> levels) {
    PyramidParams p;
    p.levels = std::move(levels);
    int n_levels = static_cast<int>(p.levels.size());
    p.fusion =
        DenseLayerParams::conv(n_levels * channels, channels, 1, 1, 1, 0, Activation::None);
    float w = 1.0f / n_levels;
    for (int o = 0; o < channels; ++o) {
        for (int l = 0; l < n_levels; ++l) {
            p.fusion.weights[static_cast<size_t>(o) * n_levels * channels +
                             static_cast<size_t>(l) * channels + o] = w;
        }
    }
    return p;
}

void PyramidParams::validate() const {
    if (levels.empty()) throw std::invalid_argument("PyramidParams: levels must be non-empty");
    for (size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] < 1) throw std::invalid_argument("PyramidParams: levels must be >= 1");
        if (i > 0 && levels[i] >= levels[i - 1]) {
            throw std::invalid_argument("PyramidParams: levels must be strictly decreasing");
        }
    }
    if (samples_per_bin < 1) throw std::invalid_argument("PyramidParams: samples_per_bin >= 1");
    fusion.validate();
}

namespace {

// Bilinear read in feature-cell coordinates (integer positions are cell
// centers); neighbors outside the map contribute 0.
double sample_zero_padded(const FeatureMap& fmap, int c, double y, double x) {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double wx = x - x0;
    double wy = y - y0;
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy) {
        int yy = y0 + dy;
        if (yy < 0 || yy >= fmap.height) continue;
        double wyv = dy == 0 ? 1.0 - wy : wy;
        for (int dx = 0; dx <= 1; ++dx) {
            int xx = x0 + dx;
            if (xx < 0 || xx >= fmap.width) continue;
            double wxv = dx == 0 ? 1.0 - wx : wx;
            acc += wyv * wxv * fmap.at(c, yy, xx);
        }
    }
    return acc;
}

}  // namespace

PooledFeature roialign(const FeatureMap& fmap, const Box& box, int out_size, int samples_per_bin) {
    fmap.validate();
    box.require_valid("roialign");
    if (out_size < 1) throw std::invalid_argument("roialign: out_size must be >= 1");
    if (samples_per_bin < 1) throw std::invalid_argument("roialign: samples_per_bin must be >= 1");

    double fx0 = box.x0() / fmap.stride;
    double fy0 = box.y0() / fmap.stride;
    double bin_w = box.w / fmap.stride / out_size;
    double bin_h = box.h / fmap.stride / out_size;

    PooledFeature out(fmap.channels, out_size, PoolKind::Plain, box);
    double norm = 1.0 / (static_cast<double>(samples_per_bin) * samples_per_bin);
    for (int c = 0; c < fmap.channels; ++c) {
        for (int by = 0; by < out_size; ++by) {
            for (int bx = 0; bx < out_size; ++bx) {
                double acc = 0.0;
                for (int sy = 0; sy < samples_per_bin; ++sy) {
                    double y = fy0 + (by + (sy + 0.5) / samples_per_bin) * bin_h - 0.5;
                    for (int sx = 0; sx < samples_per_bin; ++sx) {
                        double x = fx0 + (bx + (sx + 0.5) / samples_per_bin) * bin_w - 0.5;
                        acc += sample_zero_padded(fmap, c, y, x);
                    }
                }
                out.at(c, by, bx) = static_cast<float>(acc * norm);
            }
        }
    }
    return out;
}

PooledFeature pyramid_roialign(const FeatureMap& fmap, const Box& box, const PyramidParams& params) {
    params.validate();
    if (params.fusion.in_channels != static_cast<int>(params.levels.size()) * fmap.channels) {
        throw std::invalid_argument("pyramid_roialign: fusion conv channel mismatch");
    }

    int top = params.levels.front();
    FeatureMap cat(static_cast<int>(params.levels.size()) * fmap.channels, top, top, 1.0f);
    int offset = 0;
    for (int level : params.levels) {
        PooledFeature pooled = roialign(fmap, box, level, params.samples_per_bin);
        FeatureMap lv(fmap.channels, level, level, 1.0f);
        lv.data = pooled.data;
        if (level != top) lv = resize_bilinear(lv, top, top);
        size_t plane = static_cast<size_t>(top) * top;
        std::copy(lv.data.begin(), lv.data.end(), cat.data.begin() + offset * plane);
        offset += fmap.channels;
    }
    cat.stride = 1.0f;

    FeatureMap fused = conv2d(cat, params.fusion);
    PooledFeature out(fused.channels, top, PoolKind::PyramidFused, box);
    out.data = fused.data;
    return out;
}

}  // namespace cract
