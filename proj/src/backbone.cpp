#include "cract/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace cract {

namespace {
constexpr double kPi = 3.14159265358979323846;

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
}  // namespace

ImagePatch::ImagePatch(int c, int h, int w, float fill)
    : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, fill) {
    validate();
}

void ImagePatch::validate() const {
    if (channels != 1 && channels != 3) {
        throw std::invalid_argument("ImagePatch: channels must be 1 or 3");
    }
    if (height < 1 || width < 1) throw std::invalid_argument("ImagePatch: dims must be >= 1");
    if (data.size() != static_cast<size_t>(channels) * height * width) {
        throw std::invalid_argument("ImagePatch: data length does not match dims");
    }
}

float ImagePatch::mean() const {
    double acc = 0.0;
    for (float v : data) acc += v;
    return data.empty() ? 0.0f : static_cast<float>(acc / data.size());
}

Box AffineMap::to_patch(const Box& b) const {
    return Box((b.cx - origin_x) * scale, (b.cy - origin_y) * scale, b.w * scale, b.h * scale);
}

Box AffineMap::to_image(const Box& b) const {
    return Box(b.cx / scale + origin_x, b.cy / scale + origin_y, b.w / scale, b.h / scale);
}

BackboneParams BackboneParams::make_default(uint64_t seed) {
    BackboneParams p;
    p.mode = BackboneMode::Handcrafted;
    p.channels_per_level = 8;
    p.seed = seed;
    p.fusion = DenseLayerParams::conv(16, 8, 1, 1, 1, 0, Activation::None);
    // average matching phi3/phi4 channel pairs
    for (int o = 0; o < 8; ++o) {
        p.fusion.weights[static_cast<size_t>(o) * 16 + o] = 0.5f;
        p.fusion.weights[static_cast<size_t>(o) * 16 + o + 8] = 0.5f;
    }
    return p;
}

BackboneParams BackboneParams::make_random_conv(uint64_t seed, int channels) {
    BackboneParams p;
    p.mode = BackboneMode::SeededRandomConv;
    p.channels_per_level = channels;
    p.seed = seed;
    p.fusion = DenseLayerParams::conv(2 * channels, channels, 1, 1, 1, 0, Activation::None);
    Rng rng(mix_seed(seed, 0xf05e));
    float sd = 1.0f / std::sqrt(static_cast<float>(2 * channels));
    for (float& w : p.fusion.weights) w = rng.normal_f(0.0f, sd);
    return p;
}

void BackboneParams::validate() const {
    if (channels_per_level < 1) {
        throw std::invalid_argument("BackboneParams: channels_per_level must be >= 1");
    }
    fusion.validate();
    if (fusion.in_channels != 2 * channels_per_level) {
        throw std::invalid_argument("BackboneParams: fusion conv input channels must equal phi3+phi4");
    }
}

CropResult crop_region(const ImagePatch& image, const Box& box, double context, int out_size) {
    image.validate();
    box.require_valid("crop_region");
    if (context < 1.0) throw std::invalid_argument("crop_region: context must be >= 1");
    if (out_size < 16 || out_size % 16 != 0) {
        throw std::invalid_argument("crop_region: out_size must be a positive multiple of 16");
    }

    double side = context * std::sqrt(box.w * box.h);
    AffineMap map;
    map.origin_x = box.cx - side / 2.0;
    map.origin_y = box.cy - side / 2.0;
    map.scale = static_cast<double>(out_size) / side;

    float fill = image.mean();
    ImagePatch patch(image.channels, out_size, out_size);
    for (int py = 0; py < out_size; ++py) {
        double v = map.origin_y + (py + 0.5) / map.scale;
        for (int px = 0; px < out_size; ++px) {
            double u = map.origin_x + (px + 0.5) / map.scale;
            if (u < 0.0 || u > image.width || v < 0.0 || v > image.height) {
                for (int c = 0; c < image.channels; ++c) patch.at(c, py, px) = fill;
                continue;
            }
            double fx = std::clamp(u - 0.5, 0.0, static_cast<double>(image.width - 1));
            double fy = std::clamp(v - 0.5, 0.0, static_cast<double>(image.height - 1));
            int x0 = static_cast<int>(fx);
            int y0 = static_cast<int>(fy);
            int x1 = std::min(x0 + 1, image.width - 1);
            int y1 = std::min(y0 + 1, image.height - 1);
            double wx = fx - x0;
            double wy = fy - y0;
            for (int c = 0; c < image.channels; ++c) {
                double top = image.at(c, y0, x0) * (1.0 - wx) + image.at(c, y0, x1) * wx;
                double bot = image.at(c, y1, x0) * (1.0 - wx) + image.at(c, y1, x1) * wx;
                patch.at(c, py, px) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return {std::move(patch), map};
}

namespace {

// Per-pixel gradient stats shared by both feature levels.
struct GradientField {
    std::vector<float> gray, gx, gy, mag;
    std::vector<int> bin;
};

GradientField compute_gradients(const ImagePatch& patch) {
    int h = patch.height, w = patch.width;
    GradientField f;
    f.gray.resize(static_cast<size_t>(h) * w);
    f.gx.resize(f.gray.size());
    f.gy.resize(f.gray.size());
    f.mag.resize(f.gray.size());
    f.bin.resize(f.gray.size());

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < patch.channels; ++c) acc += patch.at(c, y, x);
            f.gray[static_cast<size_t>(y) * w + x] = static_cast<float>(acc / patch.channels);
        }
    }
    for (int y = 0; y < h; ++y) {
        int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
        for (int x = 0; x < w; ++x) {
            int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
            size_t i = static_cast<size_t>(y) * w + x;
            float gx = 0.5f * (f.gray[static_cast<size_t>(y) * w + x1] -
                               f.gray[static_cast<size_t>(y) * w + x0]);
            float gy = 0.5f * (f.gray[static_cast<size_t>(y1) * w + x] -
                               f.gray[static_cast<size_t>(y0) * w + x]);
            f.gx[i] = gx;
            f.gy[i] = gy;
            f.mag[i] = std::sqrt(gx * gx + gy * gy);
            int b = static_cast<int>((std::atan2(gy, gx) + kPi) / (kPi / 2.0));
            f.bin[i] = std::clamp(b, 0, 3);
        }
    }
    return f;
}

// 8 channels per cell: mean intensity, mean gx, mean gy, mean magnitude,
// 4 orientation-binned magnitude means.
FeatureMap pool_cells(const GradientField& f, int patch_w, int patch_h, int cell) {
    int gh = patch_h / cell, gw = patch_w / cell;
    FeatureMap out(8, gh, gw, static_cast<float>(cell));
    double norm = 1.0 / (static_cast<double>(cell) * cell);
    for (int i = 0; i < gh; ++i) {
        for (int j = 0; j < gw; ++j) {
            double sums[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            for (int dy = 0; dy < cell; ++dy) {
                size_t row = static_cast<size_t>(i * cell + dy) * patch_w + j * cell;
                for (int dx = 0; dx < cell; ++dx) {
                    size_t k = row + dx;
                    sums[0] += f.gray[k];
                    sums[1] += f.gx[k];
                    sums[2] += f.gy[k];
                    sums[3] += f.mag[k];
                    sums[4 + f.bin[k]] += f.mag[k];
                }
            }
            for (int c = 0; c < 8; ++c) out.at(c, i, j) = static_cast<float>(sums[c] * norm);
        }
    }
    return out;
}

ImagePatch to_gray(const ImagePatch& patch) {
    if (patch.channels == 1) return patch;
    ImagePatch g(1, patch.height, patch.width);
    for (int y = 0; y < patch.height; ++y) {
        for (int x = 0; x < patch.width; ++x) {
            g.at(0, y, x) = (patch.at(0, y, x) + patch.at(1, y, x) + patch.at(2, y, x)) / 3.0f;
        }
    }
    return g;
}

}  // namespace

std::pair<FeatureMap, FeatureMap> extract_features(const ImagePatch& patch,
                                                   const BackboneParams& params) {
    patch.validate();
    params.validate();
    if (patch.height % 16 != 0 || patch.width % 16 != 0) {
        throw std::invalid_argument("extract_features: patch side must be divisible by 16");
    }

    if (params.mode == BackboneMode::Handcrafted) {
        GradientField f = compute_gradients(patch);
        FeatureMap phi3 = pool_cells(f, patch.width, patch.height, 8);
        FeatureMap phi4 = pool_cells(f, patch.width, patch.height, 16);
        return {std::move(phi3), std::move(phi4)};
    }

    // seeded-random-conv mode
    ImagePatch gray = to_gray(patch);
    FeatureMap in(1, gray.height, gray.width, 1.0f);
    in.data = gray.data;

    int c = params.channels_per_level;
    DenseLayerParams conv1 = DenseLayerParams::conv(1, c, 8, 8, 8, 0, Activation::Relu);
    DenseLayerParams conv2 = DenseLayerParams::conv(c, c, 2, 2, 2, 0, Activation::Relu);
    Rng r1(mix_seed(params.seed, 0xc011));
    float sd1 = 1.0f / 8.0f;
    for (float& w : conv1.weights) w = r1.normal_f(0.0f, sd1);
    Rng r2(mix_seed(params.seed, 0xc012));
    float sd2 = 1.0f / std::sqrt(static_cast<float>(4 * c));
    for (float& w : conv2.weights) w = r2.normal_f(0.0f, sd2);

    FeatureMap phi3 = conv2d(in, conv1);
    FeatureMap phi4 = conv2d(phi3, conv2);
    return {std::move(phi3), std::move(phi4)};
}

FeatureMap fuse_features(const FeatureMap& phi3, const FeatureMap& phi4,
                         const BackboneParams& params) {
    phi3.validate();
    phi4.validate();
    params.validate();
    if (params.fusion.in_channels != phi3.channels + phi4.channels) {
        throw std::invalid_argument("fuse_features: channel mismatch vs fusion conv");
    }
    FeatureMap phi3r = resize_bilinear(phi3, phi4.height, phi4.width);
    phi3r.stride = phi4.stride;
    FeatureMap cat = concat_channels(phi3r, phi4);
    FeatureMap fused = conv2d(cat, params.fusion);
    fused.stride = phi4.stride;
    return fused;
}

FeatureMap extract_fused(const ImagePatch& patch, const BackboneParams& params) {
    auto [phi3, phi4] = extract_features(patch, params);
    return fuse_features(phi3, phi4, params);
}

ImagePatch read_image(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("read_image: cannot open " + path);

    auto next_token = [&](std::string* tok) {
        tok->clear();
        int ch;
        while ((ch = std::fgetc(f.get())) != EOF) {
            if (ch == '#') {
                while ((ch = std::fgetc(f.get())) != EOF && ch != '\n') {
                }
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok->empty()) return true;
                continue;
            }
            tok->push_back(static_cast<char>(ch));
        }
        return !tok->empty();
    };

    std::string magic, ws, hs, maxs;
    if (!next_token(&magic) || (magic != "P5" && magic != "P6")) {
        throw std::runtime_error("read_image: not a binary PGM/PPM file: " + path);
    }
    if (!next_token(&ws) || !next_token(&hs) || !next_token(&maxs)) {
        throw std::runtime_error("read_image: truncated header in " + path);
    }
    int w = std::stoi(ws), h = std::stoi(hs), maxval = std::stoi(maxs);
    if (w < 1 || h < 1) throw std::runtime_error("read_image: bad dimensions in " + path);
    if (maxval != 255) throw std::runtime_error("read_image: only 8-bit maxval 255 supported: " + path);

    int channels = magic == "P5" ? 1 : 3;
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
    if (std::fread(raw.data(), 1, raw.size(), f.get()) != raw.size()) {
        throw std::runtime_error("read_image: truncated payload in " + path);
    }

    ImagePatch img(channels, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                img.at(c, y, x) = raw[(static_cast<size_t>(y) * w + x) * channels + c] / 255.0f;
            }
        }
    }
    return img;
}

void write_image(const std::string& path, const ImagePatch& image) {
    image.validate();
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("write_image: cannot open " + path);
    std::fprintf(f.get(), "%s\n%d %d\n255\n", image.channels == 1 ? "P5" : "P6", image.width,
                 image.height);
    std::vector<unsigned char> raw(static_cast<size_t>(image.width) * image.height * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                raw[(static_cast<size_t>(y) * image.width + x) * image.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    if (std::fwrite(raw.data(), 1, raw.size(), f.get()) != raw.size()) {
        throw std::runtime_error("write_image: write failed for " + path);
    }
}

}  // namespace cract
