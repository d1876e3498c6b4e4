#pragma once

#include <vector>

#include "cract/tensor.hpp"

namespace cract {

// The refinement heads all share one shape: a 1x1 conv over an S x S grid,
// flatten, then a chain of fc layers (relu between, linear last). This is the
// minimal forward/backward machinery needed to fit them at desk scale.
struct HeadStack {
    DenseLayerParams conv;               // 1x1 conv
    std::vector<DenseLayerParams> fcs;   // last layer linear
    int spatial = 6;

    void validate() const;
    int input_dim() const { return conv.in_channels * spatial * spatial; }
    int output_dim() const { return fcs.back().out_dim; }

    static HeadStack make(int in_channels, int mid_channels, int spatial,
                          const std::vector<int>& fc_dims, int out_dim, uint64_t seed);
};

struct HeadCache {
    std::vector<float> input;
    std::vector<float> conv_out;               // post-activation
    std::vector<std::vector<float>> fc_out;    // post-activation per fc layer
};

// Gradients are carried in parameter-shaped containers.
struct HeadGrads {
    DenseLayerParams conv;
    std::vector<DenseLayerParams> fcs;

    static HeadGrads zeros_like(const HeadStack& head);
    void accumulate(const HeadGrads& other);
    void scale(float s);
};

std::vector<float> conv1x1_forward(const DenseLayerParams& conv, const std::vector<float>& input,
                                   int num_cells);
std::vector<float> fc_chain_forward(const std::vector<DenseLayerParams>& fcs,
                                    const std::vector<float>& input,
                                    std::vector<std::vector<float>>* cache);

std::vector<float> head_forward(const HeadStack& head, const std::vector<float>& input,
                                HeadCache* cache);

// dout is dLoss/d(final linear output). Returns parameter gradients; when
// dinput is non-null the gradient wrt the conv input is produced as well.
HeadGrads head_backward(const HeadStack& head, const HeadCache& cache,
                        const std::vector<float>& dout, std::vector<float>* dinput = nullptr);

// Backward through the fc chain only (conv output treated as fixed input).
void fc_chain_backward(const std::vector<DenseLayerParams>& fcs, const std::vector<float>& input,
                       const std::vector<std::vector<float>>& cache,
                       const std::vector<float>& dout, std::vector<DenseLayerParams>* grads,
                       std::vector<float>* dinput);

// SGD with momentum over a whole head.
struct SgdOptimizer {
    double learning_rate = 1e-2;
    double momentum = 0.9;
    HeadGrads velocity;

    explicit SgdOptimizer(const HeadStack& head, double lr, double mom);
    void step(HeadStack* head, const HeadGrads& grads);
};

}  // namespace cract
