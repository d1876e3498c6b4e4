#pragma once

#include <vector>

#include "cract/geometry.hpp"
#include "cract/tensor.hpp"

namespace cract {

struct Proposal {
    Box box;
    double coarse_score = 0.0;  // in [0, 1]
};

enum class RpnMode { CorrelationOnly, Trained };

// Coarse proposal scorer. Correlation-only mode is training-free: anchors are
// scored by the normalized cross-correlation response and kept as-is. Trained
// mode adds minimal 1x1-conv heads (one per branch) producing per-anchor
// classification logits and box offsets.
struct RpnHeads {
    RpnMode mode = RpnMode::CorrelationOnly;
    int anchors_per_cell = 0;     // trained mode
    DenseLayerParams cls_conv;    // 1x1, C -> anchors_per_cell logits
    DenseLayerParams reg_conv;    // 1x1, C -> 4 * anchors_per_cell offsets

    static RpnHeads correlation_only();
    static RpnHeads trained(int feature_channels, int anchors_per_cell, uint64_t seed);
    void validate() const;
};

// Normalized cross-correlation of the template against every aligned position
// of the search map (zero-mean per window, unit norm, all channels jointly),
// mapped from [-1, 1] to [0, 1]. Output is 1 x (H-th+1) x (W-tw+1).
FeatureMap xcorr(const FeatureMap& tmpl, const FeatureMap& search);

// Scores anchors (row-major cell order, anchors_per_cell consecutive entries
// per cell, matching generate_anchors output), applies regression offsets in
// trained mode, and returns at most `n` proposals after NMS, best first.
std::vector<Proposal> extract_proposals(const FeatureMap& z34, const FeatureMap& x34,
                                        const std::vector<Box>& anchors, const RpnHeads& heads,
                                        int n, double nms_thr);

double smooth_l1(double d);

// Mean binary cross entropy over labeled anchors plus mean smooth-L1 over
// positive anchors' offsets against encode_offsets(anchor, gt).
double rpn_loss(const std::vector<double>& pred_scores,
                const std::vector<OffsetVector>& pred_offsets, const std::vector<Box>& anchors,
                const Box& gt, double pos_thr, double neg_thr);

struct RpnPredictions {
    std::vector<double> scores;           // sigmoid probabilities per anchor
    std::vector<OffsetVector> offsets;    // per anchor
};

RpnPredictions rpn_forward(const FeatureMap& x34, const RpnHeads& heads);

struct RpnGrads {
    DenseLayerParams cls_conv;
    DenseLayerParams reg_conv;
};

// Loss of rpn_forward's predictions with analytic gradients wrt head params.
double rpn_loss_with_grads(const FeatureMap& x34, const RpnHeads& heads,
                           const std::vector<Box>& anchors, const Box& gt, double pos_thr,
                           double neg_thr, RpnGrads* grads);

}  // namespace cract
