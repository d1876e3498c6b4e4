#include "cract/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

namespace cract {

namespace {

void check_finite(const std::vector<float>& values, const char* where) {
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(where) + ": non-finite value in output");
        }
    }
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

FeatureMap::FeatureMap(int c, int h, int w, float stride_px, float fill)
    : channels(c), height(h), width(w), stride(stride_px),
      data(static_cast<size_t>(c) * h * w, fill) {
    validate();
}

void FeatureMap::validate() const {
    if (channels < 1 || height < 1 || width < 1) {
        throw std::invalid_argument("FeatureMap: dims must be >= 1");
    }
    if (!(stride > 0.0f) || !std::isfinite(stride)) {
        throw std::invalid_argument("FeatureMap: stride must be positive and finite");
    }
    if (data.size() != static_cast<size_t>(channels) * height * width) {
        throw std::invalid_argument("FeatureMap: data length does not match dims");
    }
}

DenseLayerParams DenseLayerParams::conv(int in_ch, int out_ch, int kh, int kw, int stride,
                                        int padding, Activation act) {
    DenseLayerParams p;
    p.kind = LayerKind::Conv2d;
    p.activation = act;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.kernel_h = kh;
    p.kernel_w = kw;
    p.stride = stride;
    p.padding = padding;
    p.weights.assign(static_cast<size_t>(out_ch) * in_ch * kh * kw, 0.0f);
    p.bias.assign(out_ch, 0.0f);
    return p;
}

DenseLayerParams DenseLayerParams::fully_connected(int in_dim, int out_dim, Activation act) {
    DenseLayerParams p;
    p.kind = LayerKind::FullyConnected;
    p.activation = act;
    p.in_dim = in_dim;
    p.out_dim = out_dim;
    p.weights.assign(static_cast<size_t>(out_dim) * in_dim, 0.0f);
    p.bias.assign(out_dim, 0.0f);
    return p;
}

void DenseLayerParams::validate() const {
    if (kind == LayerKind::Conv2d) {
        if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 ||
            padding < 0) {
            throw std::invalid_argument("DenseLayerParams: bad conv shape metadata");
        }
        if (weights.size() != static_cast<size_t>(out_channels) * in_channels * kernel_h * kernel_w) {
            throw std::invalid_argument("DenseLayerParams: conv weight length mismatch");
        }
        if (bias.size() != static_cast<size_t>(out_channels)) {
            throw std::invalid_argument("DenseLayerParams: conv bias length mismatch");
        }
    } else {
        if (in_dim < 1 || out_dim < 1) {
            throw std::invalid_argument("DenseLayerParams: bad fc shape metadata");
        }
        if (weights.size() != static_cast<size_t>(out_dim) * in_dim) {
            throw std::invalid_argument("DenseLayerParams: fc weight length mismatch");
        }
        if (bias.size() != static_cast<size_t>(out_dim)) {
            throw std::invalid_argument("DenseLayerParams: fc bias length mismatch");
        }
    }
}

Rng::Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: hi < lo");
    uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = uniform(-1.0, 1.0);
        v = uniform(-1.0, 1.0);
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
}

float Rng::normal_f(float mean, float stddev) {
    return mean + stddev * static_cast<float>(normal());
}

Rng Rng::fork(uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

uint64_t mix_seed(uint64_t seed, uint64_t tag) { return splitmix64(seed ^ splitmix64(tag)); }

void apply_activation(std::vector<float>& values, Activation act) {
    switch (act) {
        case Activation::None:
            break;
        case Activation::Relu:
            for (float& v : values) v = v > 0.0f ? v : 0.0f;
            break;
        case Activation::Softmax: {
            float mx = *std::max_element(values.begin(), values.end());
            double sum = 0.0;
            for (float& v : values) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (float& v : values) v = static_cast<float>(v / sum);
            break;
        }
    }
}

FeatureMap conv2d(const FeatureMap& input, const DenseLayerParams& params) {
    input.validate();
    params.validate();
    if (params.kind != LayerKind::Conv2d) {
        throw std::invalid_argument("conv2d: params.kind must be Conv2d");
    }
    if (params.in_channels != input.channels) {
        throw std::invalid_argument("conv2d: input channels do not match params");
    }
    int out_h = (input.height + 2 * params.padding - params.kernel_h) / params.stride + 1;
    int out_w = (input.width + 2 * params.padding - params.kernel_w) / params.stride + 1;
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }

    FeatureMap out(params.out_channels, out_h, out_w, input.stride * params.stride);
    for (int oc = 0; oc < params.out_channels; ++oc) {
        const float* wbase =
            params.weights.data() +
            static_cast<size_t>(oc) * params.in_channels * params.kernel_h * params.kernel_w;
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = params.bias[oc];
                int iy0 = oy * params.stride - params.padding;
                int ix0 = ox * params.stride - params.padding;
                for (int ic = 0; ic < params.in_channels; ++ic) {
                    const float* w = wbase + static_cast<size_t>(ic) * params.kernel_h * params.kernel_w;
                    for (int ky = 0; ky < params.kernel_h; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= input.height) continue;
                        for (int kx = 0; kx < params.kernel_w; ++kx) {
                            int ix = ix0 + kx;
                            if (ix < 0 || ix >= input.width) continue;
                            acc += static_cast<double>(input.at(ic, iy, ix)) * w[ky * params.kernel_w + kx];
                        }
                    }
                }
                out.at(oc, oy, ox) = static_cast<float>(acc);
            }
        }
    }

    if (params.activation == Activation::Softmax) {
        // softmax across channels at each spatial cell
        std::vector<float> cell(params.out_channels);
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                for (int c = 0; c < params.out_channels; ++c) cell[c] = out.at(c, y, x);
                apply_activation(cell, Activation::Softmax);
                for (int c = 0; c < params.out_channels; ++c) out.at(c, y, x) = cell[c];
            }
        }
    } else {
        apply_activation(out.data, params.activation);
    }
    check_finite(out.data, "conv2d");
    return out;
}

std::vector<float> fully_connected(const std::vector<float>& input, const DenseLayerParams& params) {
    params.validate();
    if (params.kind != LayerKind::FullyConnected) {
        throw std::invalid_argument("fully_connected: params.kind must be FullyConnected");
    }
    if (static_cast<int>(input.size()) != params.in_dim) {
        throw std::invalid_argument("fully_connected: input length does not match in_dim");
    }
    std::vector<float> out(params.out_dim);
    for (int o = 0; o < params.out_dim; ++o) {
        const float* w = params.weights.data() + static_cast<size_t>(o) * params.in_dim;
        double acc = params.bias[o];
        for (int i = 0; i < params.in_dim; ++i) acc += static_cast<double>(w[i]) * input[i];
        out[o] = static_cast<float>(acc);
    }
    apply_activation(out, params.activation);
    check_finite(out, "fully_connected");
    return out;
}

FeatureMap resize_bilinear(const FeatureMap& input, int out_h, int out_w) {
    input.validate();
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("resize_bilinear: output dims must be >= 1");
    }
    FeatureMap out(input.channels, out_h, out_w,
                   input.stride * static_cast<float>(input.height) / static_cast<float>(out_h));
    double sy = static_cast<double>(input.height) / out_h;
    double sx = static_cast<double>(input.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        // align-corners-false: sample centers at (i + 0.5) * scale - 0.5
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(input.height - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, input.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(input.width - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, input.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < input.channels; ++c) {
                double top = input.at(c, y0, x0) * (1.0 - wx) + input.at(c, y0, x1) * wx;
                double bot = input.at(c, y1, x0) * (1.0 - wx) + input.at(c, y1, x1) * wx;
                out.at(c, y, x) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    check_finite(out.data, "resize_bilinear");
    return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    a.validate();
    b.validate();
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("concat_channels: spatial dims differ");
    }
    if (a.stride != b.stride) {
        throw std::invalid_argument("concat_channels: strides differ");
    }
    FeatureMap out(a.channels + b.channels, a.height, a.width, a.stride);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

FeatureMap slice_channels(const FeatureMap& input, int first, int count) {
    input.validate();
    if (first < 0 || count < 1 || first + count > input.channels) {
        throw std::invalid_argument("slice_channels: channel range out of bounds");
    }
    FeatureMap out(count, input.height, input.width, input.stride);
    size_t plane = static_cast<size_t>(input.height) * input.width;
    std::copy(input.data.begin() + first * plane, input.data.begin() + (first + count) * plane,
              out.data.begin());
    return out;
}

namespace {

constexpr uint32_t kFmapVersion = 1;
constexpr uint64_t kMaxFmapElements = 1ULL << 30;

void put_u32(FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

void put_f32(FILE* f, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(f, bits);
}

bool get_u32(FILE* f, uint32_t* out) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) return false;
    *out = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return true;
}

bool get_f32(FILE* f, float* out) {
    uint32_t bits;
    if (!get_u32(f, &bits)) return false;
    std::memcpy(out, &bits, 4);
    return true;
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_fmap(const std::string& path, const FeatureMap& fmap) {
    fmap.validate();
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("write_fmap: cannot open " + path);
    std::fwrite("FMAP", 1, 4, f.get());
    put_u32(f.get(), kFmapVersion);
    put_u32(f.get(), 3);
    put_u32(f.get(), static_cast<uint32_t>(fmap.channels));
    put_u32(f.get(), static_cast<uint32_t>(fmap.height));
    put_u32(f.get(), static_cast<uint32_t>(fmap.width));
    put_f32(f.get(), fmap.stride);
    for (float v : fmap.data) put_f32(f.get(), v);
    if (std::ferror(f.get())) throw std::runtime_error("write_fmap: write failed for " + path);
}

FeatureMap read_fmap(const std::string& path) {
    std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("read_fmap: cannot open " + path);

    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "FMAP", 4) != 0) {
        throw std::runtime_error("read_fmap: bad magic in " + path);
    }
    uint32_t version = 0, ndims = 0;
    if (!get_u32(f.get(), &version) || !get_u32(f.get(), &ndims)) {
        throw std::runtime_error("read_fmap: truncated header in " + path);
    }
    if (version != kFmapVersion) {
        throw std::runtime_error("read_fmap: unsupported version in " + path);
    }
    if (ndims != 3) {
        throw std::runtime_error("read_fmap: expected 3 dims in " + path);
    }
    uint32_t dims[3];
    uint64_t total = 1;
    for (uint32_t i = 0; i < 3; ++i) {
        if (!get_u32(f.get(), &dims[i])) {
            throw std::runtime_error("read_fmap: truncated header in " + path);
        }
        if (dims[i] == 0) throw std::runtime_error("read_fmap: zero dim in " + path);
        total *= dims[i];
        if (total > kMaxFmapElements) {
            throw std::runtime_error("read_fmap: dim overflow in " + path);
        }
    }
    float stride = 0.0f;
    if (!get_f32(f.get(), &stride)) {
        throw std::runtime_error("read_fmap: truncated header in " + path);
    }
    if (!(stride > 0.0f) || !std::isfinite(stride)) {
        throw std::runtime_error("read_fmap: invalid stride in " + path);
    }

    FeatureMap out(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                   stride);
    for (size_t i = 0; i < out.data.size(); ++i) {
        if (!get_f32(f.get(), &out.data[i])) {
            throw std::runtime_error("read_fmap: truncated payload in " + path);
        }
    }
    return out;
}

}  // namespace cract
