#include "cract/grad.hpp"

#include <cmath>
#include <stdexcept>

namespace cract {

void HeadStack::validate() const {
    conv.validate();
    if (conv.kind != LayerKind::Conv2d || conv.kernel_h != 1 || conv.kernel_w != 1) {
        throw std::invalid_argument("HeadStack: conv must be 1x1");
    }
    if (fcs.empty()) throw std::invalid_argument("HeadStack: needs at least one fc layer");
    int dim = conv.out_channels * spatial * spatial;
    for (size_t i = 0; i < fcs.size(); ++i) {
        fcs[i].validate();
        if (fcs[i].kind != LayerKind::FullyConnected) {
            throw std::invalid_argument("HeadStack: fc layer expected");
        }
        if (fcs[i].in_dim != dim) throw std::invalid_argument("HeadStack: fc dim chain mismatch");
        dim = fcs[i].out_dim;
    }
    if (fcs.back().activation != Activation::None) {
        throw std::invalid_argument("HeadStack: last fc must be linear");
    }
}

HeadStack HeadStack::make(int in_channels, int mid_channels, int spatial,
                          const std::vector<int>& fc_dims, int out_dim, uint64_t seed) {
    HeadStack head;
    head.spatial = spatial;
    head.conv = DenseLayerParams::conv(in_channels, mid_channels, 1, 1, 1, 0, Activation::Relu);
    Rng rng(mix_seed(seed, 0x6ead));
    float sd = std::sqrt(2.0f / in_channels);
    for (float& w : head.conv.weights) w = rng.normal_f(0.0f, sd);

    int dim = mid_channels * spatial * spatial;
    for (int fc_dim : fc_dims) {
        DenseLayerParams fc = DenseLayerParams::fully_connected(dim, fc_dim, Activation::Relu);
        sd = std::sqrt(2.0f / dim);
        for (float& w : fc.weights) w = rng.normal_f(0.0f, sd);
        head.fcs.push_back(std::move(fc));
        dim = fc_dim;
    }
    // zero-initialized linear output layer: heads start as the identity refinement
    head.fcs.push_back(DenseLayerParams::fully_connected(dim, out_dim, Activation::None));
    head.validate();
    return head;
}

HeadGrads HeadGrads::zeros_like(const HeadStack& head) {
    HeadGrads g;
    g.conv = head.conv;
    std::fill(g.conv.weights.begin(), g.conv.weights.end(), 0.0f);
    std::fill(g.conv.bias.begin(), g.conv.bias.end(), 0.0f);
    g.fcs = head.fcs;
    for (auto& fc : g.fcs) {
        std::fill(fc.weights.begin(), fc.weights.end(), 0.0f);
        std::fill(fc.bias.begin(), fc.bias.end(), 0.0f);
    }
    return g;
}

void HeadGrads::accumulate(const HeadGrads& other) {
    for (size_t i = 0; i < conv.weights.size(); ++i) conv.weights[i] += other.conv.weights[i];
    for (size_t i = 0; i < conv.bias.size(); ++i) conv.bias[i] += other.conv.bias[i];
    for (size_t l = 0; l < fcs.size(); ++l) {
        for (size_t i = 0; i < fcs[l].weights.size(); ++i) fcs[l].weights[i] += other.fcs[l].weights[i];
        for (size_t i = 0; i < fcs[l].bias.size(); ++i) fcs[l].bias[i] += other.fcs[l].bias[i];
    }
}

void HeadGrads::scale(float s) {
    for (float& w : conv.weights) w *= s;
    for (float& w : conv.bias) w *= s;
    for (auto& fc : fcs) {
        for (float& w : fc.weights) w *= s;
        for (float& w : fc.bias) w *= s;
    }
}

std::vector<float> conv1x1_forward(const DenseLayerParams& conv, const std::vector<float>& input,
                                   int num_cells) {
    int cells = num_cells;
    if (static_cast<int>(input.size()) != conv.in_channels * cells) {
        throw std::invalid_argument("conv1x1_forward: input size mismatch");
    }
    std::vector<float> out(static_cast<size_t>(conv.out_channels) * cells);
    for (int o = 0; o < conv.out_channels; ++o) {
        const float* w = conv.weights.data() + static_cast<size_t>(o) * conv.in_channels;
        for (int cell = 0; cell < cells; ++cell) {
            double acc = conv.bias[o];
            for (int c = 0; c < conv.in_channels; ++c) {
                acc += static_cast<double>(w[c]) * input[static_cast<size_t>(c) * cells + cell];
            }
            float v = static_cast<float>(acc);
            if (conv.activation == Activation::Relu && v < 0.0f) v = 0.0f;
            out[static_cast<size_t>(o) * cells + cell] = v;
        }
    }
    return out;
}

std::vector<float> fc_chain_forward(const std::vector<DenseLayerParams>& fcs,
                                    const std::vector<float>& input,
                                    std::vector<std::vector<float>>* cache) {
    std::vector<float> x = input;
    if (cache) cache->clear();
    for (const auto& fc : fcs) {
        x = fully_connected(x, fc);
        if (cache) cache->push_back(x);
    }
    return x;
}

std::vector<float> head_forward(const HeadStack& head, const std::vector<float>& input,
                                HeadCache* cache) {
    std::vector<float> conv_out = conv1x1_forward(head.conv, input, head.spatial * head.spatial);
    std::vector<std::vector<float>> fc_cache;
    std::vector<float> out = fc_chain_forward(head.fcs, conv_out, cache ? &fc_cache : nullptr);
    if (cache) {
        cache->input = input;
        cache->conv_out = std::move(conv_out);
        cache->fc_out = std::move(fc_cache);
    }
    return out;
}

void fc_chain_backward(const std::vector<DenseLayerParams>& fcs, const std::vector<float>& input,
                       const std::vector<std::vector<float>>& cache,
                       const std::vector<float>& dout, std::vector<DenseLayerParams>* grads,
                       std::vector<float>* dinput) {
    std::vector<float> dy = dout;
    for (int l = static_cast<int>(fcs.size()) - 1; l >= 0; --l) {
        const DenseLayerParams& fc = fcs[l];
        const std::vector<float>& x = l == 0 ? input : cache[l - 1];
        // relu applied at this layer's output: mask dy by post-activation sign
        if (fc.activation == Activation::Relu) {
            for (int o = 0; o < fc.out_dim; ++o) {
                if (cache[l][o] <= 0.0f) dy[o] = 0.0f;
            }
        }
        if (grads) {
            DenseLayerParams& g = (*grads)[l];
            for (int o = 0; o < fc.out_dim; ++o) {
                float d = dy[o];
                g.bias[o] += d;
                if (d == 0.0f) continue;
                float* gw = g.weights.data() + static_cast<size_t>(o) * fc.in_dim;
                for (int i = 0; i < fc.in_dim; ++i) gw[i] += d * x[i];
            }
        }
        if (l > 0 || dinput) {
            std::vector<float> dx(fc.in_dim, 0.0f);
            for (int o = 0; o < fc.out_dim; ++o) {
                float d = dy[o];
                if (d == 0.0f) continue;
                const float* w = fc.weights.data() + static_cast<size_t>(o) * fc.in_dim;
                for (int i = 0; i < fc.in_dim; ++i) dx[i] += d * w[i];
            }
            dy = std::move(dx);
        }
    }
    if (dinput) *dinput = std::move(dy);
}

HeadGrads head_backward(const HeadStack& head, const HeadCache& cache,
                        const std::vector<float>& dout, std::vector<float>* dinput) {
    HeadGrads grads = HeadGrads::zeros_like(head);
    std::vector<float> dconv_out;
    fc_chain_backward(head.fcs, cache.conv_out, cache.fc_out, dout, &grads.fcs, &dconv_out);

    int cells = head.spatial * head.spatial;
    if (head.conv.activation == Activation::Relu) {
        for (size_t i = 0; i < dconv_out.size(); ++i) {
            if (cache.conv_out[i] <= 0.0f) dconv_out[i] = 0.0f;
        }
    }
    std::vector<float> dx;
    if (dinput) dx.assign(cache.input.size(), 0.0f);
    for (int o = 0; o < head.conv.out_channels; ++o) {
        float* gw = grads.conv.weights.data() + static_cast<size_t>(o) * head.conv.in_channels;
        const float* w = head.conv.weights.data() + static_cast<size_t>(o) * head.conv.in_channels;
        for (int cell = 0; cell < cells; ++cell) {
            float d = dconv_out[static_cast<size_t>(o) * cells + cell];
            if (d == 0.0f) continue;
            grads.conv.bias[o] += d;
            for (int c = 0; c < head.conv.in_channels; ++c) {
                gw[c] += d * cache.input[static_cast<size_t>(c) * cells + cell];
                if (dinput) dx[static_cast<size_t>(c) * cells + cell] += d * w[c];
            }
        }
    }
    if (dinput) *dinput = std::move(dx);
    return grads;
}

SgdOptimizer::SgdOptimizer(const HeadStack& head, double lr, double mom)
    : learning_rate(lr), momentum(mom), velocity(HeadGrads::zeros_like(head)) {}

void SgdOptimizer::step(HeadStack* head, const HeadGrads& grads) {
    auto update = [&](std::vector<float>& params, std::vector<float>& vel,
                      const std::vector<float>& g) {
        for (size_t i = 0; i < params.size(); ++i) {
            vel[i] = static_cast<float>(momentum * vel[i] - learning_rate * g[i]);
            params[i] += vel[i];
        }
    };
    update(head->conv.weights, velocity.conv.weights, grads.conv.weights);
    update(head->conv.bias, velocity.conv.bias, grads.conv.bias);
    for (size_t l = 0; l < head->fcs.size(); ++l) {
        update(head->fcs[l].weights, velocity.fcs[l].weights, grads.fcs[l].weights);
        update(head->fcs[l].bias, velocity.fcs[l].bias, grads.fcs[l].bias);
    }
}

}  // namespace cract
