#include "cract/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cract/grad.hpp"

namespace cract {

RpnHeads RpnHeads::correlation_only() {
    RpnHeads h;
    h.mode = RpnMode::CorrelationOnly;
    return h;
}

RpnHeads RpnHeads::trained(int feature_channels, int anchors_per_cell, uint64_t seed) {
    RpnHeads h;
    h.mode = RpnMode::Trained;
    h.anchors_per_cell = anchors_per_cell;
    h.cls_conv = DenseLayerParams::conv(feature_channels, anchors_per_cell, 1, 1, 1, 0);
    h.reg_conv = DenseLayerParams::conv(feature_channels, 4 * anchors_per_cell, 1, 1, 1, 0);
    Rng rng(mix_seed(seed, 0x49f0));
    float sd = 0.1f / std::sqrt(static_cast<float>(feature_channels));
    for (float& w : h.cls_conv.weights) w = rng.normal_f(0.0f, sd);
    for (float& w : h.reg_conv.weights) w = rng.normal_f(0.0f, sd);
    return h;
}

void RpnHeads::validate() const {
    if (mode == RpnMode::CorrelationOnly) return;
    if (anchors_per_cell < 1) throw std::invalid_argument("RpnHeads: anchors_per_cell must be >= 1");
    cls_conv.validate();
    reg_conv.validate();
    if (cls_conv.out_channels != anchors_per_cell ||
        reg_conv.out_channels != 4 * anchors_per_cell) {
        throw std::invalid_argument("RpnHeads: head channel counts do not match anchors_per_cell");
    }
}

FeatureMap xcorr(const FeatureMap& tmpl, const FeatureMap& search) {
    tmpl.validate();
    search.validate();
    if (tmpl.channels != search.channels) {
        throw std::invalid_argument("xcorr: channel counts differ");
    }
    if (tmpl.height > search.height || tmpl.width > search.width) {
        throw std::invalid_argument("xcorr: template larger than search map");
    }

    int rh = search.height - tmpl.height + 1;
    int rw = search.width - tmpl.width + 1;
    size_t n = static_cast<size_t>(tmpl.channels) * tmpl.height * tmpl.width;

    double tmean = 0.0;
    for (float v : tmpl.data) tmean += v;
    tmean /= static_cast<double>(n);
    double tnorm2 = 0.0;
    for (float v : tmpl.data) tnorm2 += (v - tmean) * (v - tmean);
    double tnorm = std::sqrt(tnorm2);

    FeatureMap out(1, rh, rw, search.stride);
    for (int oy = 0; oy < rh; ++oy) {
        for (int ox = 0; ox < rw; ++ox) {
            double wmean = 0.0;
            for (int c = 0; c < tmpl.channels; ++c) {
                for (int y = 0; y < tmpl.height; ++y) {
                    for (int x = 0; x < tmpl.width; ++x) {
                        wmean += search.at(c, oy + y, ox + x);
                    }
                }
            }
            wmean /= static_cast<double>(n);

            double dot = 0.0, wnorm2 = 0.0;
            for (int c = 0; c < tmpl.channels; ++c) {
                for (int y = 0; y < tmpl.height; ++y) {
                    for (int x = 0; x < tmpl.width; ++x) {
                        double wv = search.at(c, oy + y, ox + x) - wmean;
                        dot += (tmpl.at(c, y, x) - tmean) * wv;
                        wnorm2 += wv * wv;
                    }
                }
            }
            double denom = tnorm * std::sqrt(wnorm2);
            double ncc = denom > 0.0 ? dot / denom : 0.0;
            ncc = std::clamp(ncc, -1.0, 1.0);
            out.at(0, oy, ox) = static_cast<float>((ncc + 1.0) / 2.0);
        }
    }
    return out;
}

std::vector<Proposal> extract_proposals(const FeatureMap& z34, const FeatureMap& x34,
                                        const std::vector<Box>& anchors, const RpnHeads& heads,
                                        int n, double nms_thr) {
    if (n < 1) throw std::invalid_argument("extract_proposals: n must be >= 1");
    if (anchors.empty()) throw std::invalid_argument("extract_proposals: anchors must be non-empty");
    heads.validate();

    std::vector<Box> boxes;
    std::vector<double> scores;

    if (heads.mode == RpnMode::CorrelationOnly) {
        FeatureMap response = xcorr(z34, x34);
        size_t cells = static_cast<size_t>(response.height) * response.width;
        if (anchors.size() % cells != 0) {
            throw std::invalid_argument("extract_proposals: anchor count not a multiple of grid cells");
        }
        size_t per_cell = anchors.size() / cells;
        boxes = anchors;
        scores.resize(anchors.size());
        for (size_t k = 0; k < anchors.size(); ++k) {
            scores[k] = response.data[k / per_cell];
        }
    } else {
        size_t cells = static_cast<size_t>(x34.height) * x34.width;
        if (anchors.size() != cells * heads.anchors_per_cell) {
            throw std::invalid_argument("extract_proposals: anchor count does not match head layout");
        }
        RpnPredictions preds = rpn_forward(x34, heads);
        boxes.resize(anchors.size());
        scores = preds.scores;
        for (size_t k = 0; k < anchors.size(); ++k) {
            boxes[k] = decode_offsets(anchors[k], preds.offsets[k]);
        }
    }

    std::vector<int> kept = nms(boxes, scores, nms_thr, n);
    std::vector<Proposal> proposals;
    proposals.reserve(kept.size());
    for (int idx : kept) proposals.push_back({boxes[idx], scores[idx]});
    return proposals;
}

double smooth_l1(double d) {
    double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

namespace {

double smooth_l1_grad(double d) { return std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0); }

constexpr double kProbClamp = 1e-12;

double bce(double p, double y) {
    p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace

double rpn_loss(const std::vector<double>& pred_scores,
                const std::vector<OffsetVector>& pred_offsets, const std::vector<Box>& anchors,
                const Box& gt, double pos_thr, double neg_thr) {
    if (pred_scores.size() != anchors.size() || pred_offsets.size() != anchors.size()) {
        throw std::invalid_argument("rpn_loss: prediction/anchor length mismatch");
    }
    std::vector<IouLabel> labels = label_by_iou(anchors, gt, pos_thr, neg_thr);

    double cls_sum = 0.0, reg_sum = 0.0;
    int n_labeled = 0, n_pos = 0;
    for (size_t k = 0; k < anchors.size(); ++k) {
        if (labels[k] == IouLabel::Ignore) continue;
        double y = labels[k] == IouLabel::Positive ? 1.0 : 0.0;
        cls_sum += bce(pred_scores[k], y);
        ++n_labeled;
        if (labels[k] == IouLabel::Positive) {
            OffsetVector target = encode_offsets(anchors[k], gt);
            reg_sum += smooth_l1(pred_offsets[k].rx - target.rx) +
                       smooth_l1(pred_offsets[k].ry - target.ry) +
                       smooth_l1(pred_offsets[k].rw - target.rw) +
                       smooth_l1(pred_offsets[k].rh - target.rh);
            ++n_pos;
        }
    }
    double loss = n_labeled > 0 ? cls_sum / n_labeled : 0.0;
    if (n_pos > 0) loss += reg_sum / n_pos;
    return loss;
}

RpnPredictions rpn_forward(const FeatureMap& x34, const RpnHeads& heads) {
    if (heads.mode != RpnMode::Trained) {
        throw std::invalid_argument("rpn_forward: heads must be in trained mode");
    }
    heads.validate();
    if (heads.cls_conv.in_channels != x34.channels) {
        throw std::invalid_argument("rpn_forward: feature channels do not match heads");
    }
    int cells = x34.height * x34.width;
    std::vector<float> cls = conv1x1_forward(heads.cls_conv, x34.data, cells);
    std::vector<float> reg = conv1x1_forward(heads.reg_conv, x34.data, cells);

    int a_per_cell = heads.anchors_per_cell;
    RpnPredictions out;
    out.scores.resize(static_cast<size_t>(cells) * a_per_cell);
    out.offsets.resize(out.scores.size());
    for (int cell = 0; cell < cells; ++cell) {
        for (int a = 0; a < a_per_cell; ++a) {
            size_t k = static_cast<size_t>(cell) * a_per_cell + a;
            double logit = cls[static_cast<size_t>(a) * cells + cell];
            out.scores[k] = 1.0 / (1.0 + std::exp(-logit));
            out.offsets[k].rx = reg[(static_cast<size_t>(4 * a) + 0) * cells + cell];
            out.offsets[k].ry = reg[(static_cast<size_t>(4 * a) + 1) * cells + cell];
            out.offsets[k].rw = reg[(static_cast<size_t>(4 * a) + 2) * cells + cell];
            out.offsets[k].rh = reg[(static_cast<size_t>(4 * a) + 3) * cells + cell];
        }
    }
    return out;
}

double rpn_loss_with_grads(const FeatureMap& x34, const RpnHeads& heads,
                           const std::vector<Box>& anchors, const Box& gt, double pos_thr,
                           double neg_thr, RpnGrads* grads) {
    RpnPredictions preds = rpn_forward(x34, heads);
    if (anchors.size() != preds.scores.size()) {
        throw std::invalid_argument("rpn_loss_with_grads: anchor count does not match head layout");
    }
    double loss = rpn_loss(preds.scores, preds.offsets, anchors, gt, pos_thr, neg_thr);
    if (!grads) return loss;

    std::vector<IouLabel> labels = label_by_iou(anchors, gt, pos_thr, neg_thr);
    int n_labeled = 0, n_pos = 0;
    for (IouLabel l : labels) {
        if (l != IouLabel::Ignore) ++n_labeled;
        if (l == IouLabel::Positive) ++n_pos;
    }

    int cells = x34.height * x34.width;
    int a_per_cell = heads.anchors_per_cell;
    std::vector<double> dcls(static_cast<size_t>(a_per_cell) * cells, 0.0);
    std::vector<double> dreg(static_cast<size_t>(4 * a_per_cell) * cells, 0.0);
    for (size_t k = 0; k < anchors.size(); ++k) {
        if (labels[k] == IouLabel::Ignore) continue;
        int cell = static_cast<int>(k) / a_per_cell;
        int a = static_cast<int>(k) % a_per_cell;
        double y = labels[k] == IouLabel::Positive ? 1.0 : 0.0;
        // d bce(sigmoid(l), y) / dl = p - y
        dcls[static_cast<size_t>(a) * cells + cell] = (preds.scores[k] - y) / n_labeled;
        if (labels[k] == IouLabel::Positive) {
            OffsetVector target = encode_offsets(anchors[k], gt);
            double d[4] = {preds.offsets[k].rx - target.rx, preds.offsets[k].ry - target.ry,
                           preds.offsets[k].rw - target.rw, preds.offsets[k].rh - target.rh};
            for (int c = 0; c < 4; ++c) {
                dreg[(static_cast<size_t>(4 * a) + c) * cells + cell] = smooth_l1_grad(d[c]) / n_pos;
            }
        }
    }

    grads->cls_conv = heads.cls_conv;
    grads->reg_conv = heads.reg_conv;
    auto zero = [](DenseLayerParams& p) {
        std::fill(p.weights.begin(), p.weights.end(), 0.0f);
        std::fill(p.bias.begin(), p.bias.end(), 0.0f);
    };
    zero(grads->cls_conv);
    zero(grads->reg_conv);

    auto backprop_conv = [&](const std::vector<double>& dout, DenseLayerParams& g) {
        int out_ch = g.out_channels;
        for (int o = 0; o < out_ch; ++o) {
            float* gw = g.weights.data() + static_cast<size_t>(o) * g.in_channels;
            for (int cell = 0; cell < cells; ++cell) {
                double d = dout[static_cast<size_t>(o) * cells + cell];
                if (d == 0.0) continue;
                g.bias[o] += static_cast<float>(d);
                for (int c = 0; c < g.in_channels; ++c) {
                    gw[c] += static_cast<float>(d * x34.data[static_cast<size_t>(c) * cells + cell]);
                }
            }
        }
    };
    backprop_conv(dcls, grads->cls_conv);
    backprop_conv(dreg, grads->reg_conv);
    return loss;
}

}  // namespace cract
