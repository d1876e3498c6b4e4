#include "cract/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cract {

namespace {
const double kScaleClamp = std::log(1000.0);
const double kShiftClamp = 100.0;
}  // namespace

double offset_scale_clamp() { return kScaleClamp; }
double offset_shift_clamp() { return kShiftClamp; }

Box Box::from_corner(double x, double y, double w, double h) {
    return Box(x + w / 2.0, y + h / 2.0, w, h);
}

bool Box::valid() const {
    return w > 0.0 && h > 0.0 && std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
           std::isfinite(h);
}

void Box::require_valid(const char* where) const {
    if (!valid()) throw std::invalid_argument(std::string(where) + ": invalid box");
}

OffsetVector OffsetVector::clamped() const {
    OffsetVector r;
    r.rx = std::clamp(rx, -kShiftClamp, kShiftClamp);
    r.ry = std::clamp(ry, -kShiftClamp, kShiftClamp);
    r.rw = std::clamp(rw, -kScaleClamp, kScaleClamp);
    r.rh = std::clamp(rh, -kScaleClamp, kScaleClamp);
    return r;
}

void AnchorSpec::validate() const {
    if (ratios.empty() || scales.empty()) {
        throw std::invalid_argument("AnchorSpec: ratios and scales must be non-empty");
    }
    for (double r : ratios) {
        if (!(r > 0.0)) throw std::invalid_argument("AnchorSpec: ratios must be > 0");
    }
    for (double s : scales) {
        if (!(s > 0.0)) throw std::invalid_argument("AnchorSpec: scales must be > 0");
    }
    if (!(stride > 0.0)) throw std::invalid_argument("AnchorSpec: stride must be > 0");
}

double iou(const Box& a, const Box& b) {
    a.require_valid("iou");
    b.require_valid("iou");
    double ix = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    double iy = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return inter / uni;
}

Box decode_offsets(const Box& p, const OffsetVector& r) {
    p.require_valid("decode_offsets");
    // only the scale components are clamped here; rw/rh in +-ln(1000) keep the
    // decoded size positive while center shifts stay exactly invertible
    double rw = std::clamp(r.rw, -kScaleClamp, kScaleClamp);
    double rh = std::clamp(r.rh, -kScaleClamp, kScaleClamp);
    return Box(p.cx + p.w * r.rx, p.cy + p.h * r.ry, p.w * std::exp(rw), p.h * std::exp(rh));
}

OffsetVector encode_offsets(const Box& p, const Box& target) {
    p.require_valid("encode_offsets");
    target.require_valid("encode_offsets");
    OffsetVector r;
    r.rx = (target.cx - p.cx) / p.w;
    r.ry = (target.cy - p.cy) / p.h;
    r.rw = std::log(target.w / p.w);
    r.rh = std::log(target.h / p.h);
    return r;
}

std::vector<Box> generate_anchors(const AnchorSpec& spec, int grid_h, int grid_w) {
    spec.validate();
    if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("generate_anchors: grid dims >= 1");
    std::vector<Box> anchors;
    anchors.reserve(static_cast<size_t>(grid_h) * grid_w * spec.ratios.size() * spec.scales.size());
    for (int i = 0; i < grid_h; ++i) {
        for (int j = 0; j < grid_w; ++j) {
            double cx = (j + 0.5) * spec.stride;
            double cy = (i + 0.5) * spec.stride;
            for (double ratio : spec.ratios) {
                double root = std::sqrt(ratio);
                for (double scale : spec.scales) {
                    anchors.emplace_back(cx, cy, scale * root, scale / root);
                }
            }
        }
    }
    return anchors;
}

std::vector<IouLabel> label_by_iou(const std::vector<Box>& anchors, const Box& gt, double pos_thr,
                                   double neg_thr) {
    if (pos_thr < neg_thr) throw std::invalid_argument("label_by_iou: pos_thr < neg_thr");
    std::vector<IouLabel> labels(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i) {
        double v = iou(anchors[i], gt);
        labels[i] = v > pos_thr ? IouLabel::Positive
                  : v < neg_thr ? IouLabel::Negative
                                : IouLabel::Ignore;
    }
    return labels;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thr, int keep) {
    if (boxes.size() != scores.size()) {
        throw std::invalid_argument("nms: boxes and scores length mismatch");
    }
    if (iou_thr < 0.0 || iou_thr > 1.0) throw std::invalid_argument("nms: iou_thr out of [0,1]");

    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    std::vector<int> kept;
    std::vector<char> suppressed(boxes.size(), 0);
    for (int idx : order) {
        if (suppressed[idx]) continue;
        kept.push_back(idx);
        if (static_cast<int>(kept.size()) >= keep) break;
        for (int other : order) {
            if (suppressed[other] || other == idx) continue;
            if (iou(boxes[idx], boxes[other]) > iou_thr) suppressed[other] = 1;
        }
    }
    return kept;
}

}  // namespace cract
