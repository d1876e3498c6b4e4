#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace cract {

// Dense C x H x W feature grid, row-major within each channel.
// `stride` is the image-space size of one cell in pixels.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    float stride = 1.0f;
    std::vector<float> data;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, float stride_px, float fill = 0.0f);

    float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return data.size(); }

    void validate() const;  // throws on broken invariants
};

enum class LayerKind { Conv2d, FullyConnected };
enum class Activation { None, Relu, Softmax };

// Parameters of one dense layer (convolution or fully connected).
// Conv weights are [out][in][kh][kw]; fc weights are [out][in], both row-major.
struct DenseLayerParams {
    LayerKind kind = LayerKind::FullyConnected;
    Activation activation = Activation::None;

    // conv metadata
    int in_channels = 0;
    int out_channels = 0;
    int kernel_h = 0;
    int kernel_w = 0;
    int stride = 1;
    int padding = 0;

    // fc metadata
    int in_dim = 0;
    int out_dim = 0;

    std::vector<float> weights;
    std::vector<float> bias;

    static DenseLayerParams conv(int in_ch, int out_ch, int kh, int kw, int stride, int padding,
                                 Activation act = Activation::None);
    static DenseLayerParams fully_connected(int in_dim, int out_dim, Activation act = Activation::None);

    void validate() const;
};

// Deterministic seeded generator. The raw stream is std::mt19937_64, which the
// C++ standard pins down exactly, so identical seeds give identical streams on
// every platform. Distributions are hand-rolled on top of the raw stream.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t seed() const { return seed_; }
    uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    int uniform_int(int lo, int hi);       // inclusive on both ends
    double normal();                       // standard normal, Marsaglia polar
    float normal_f(float mean, float stddev);

    // Independent sub-stream derived from (seed, tag).
    Rng fork(uint64_t tag) const;

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t mix_seed(uint64_t seed, uint64_t tag);

// Elementary operations. All accumulate in double and verify the output is
// finite before returning.
FeatureMap conv2d(const FeatureMap& input, const DenseLayerParams& params);
std::vector<float> fully_connected(const std::vector<float>& input, const DenseLayerParams& params);
FeatureMap resize_bilinear(const FeatureMap& input, int out_h, int out_w);
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);
FeatureMap slice_channels(const FeatureMap& input, int first, int count);

void apply_activation(std::vector<float>& values, Activation act);

// FMAP binary format:
//   "FMAP" | u32 version=1 | u32 ndims | ndims x u32 dims | f32 stride | f32 payload
// all integers and floats little-endian, payload row-major.
void write_fmap(const std::string& path, const FeatureMap& fmap);
FeatureMap read_fmap(const std::string& path);

}  // namespace cract
