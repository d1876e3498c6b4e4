#pragma once

#include <vector>

namespace cract {

// Axis-aligned box in pixels, center form.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    Box() = default;
    Box(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {}

    static Box from_corner(double x, double y, double w, double h);
    double x0() const { return cx - w / 2.0; }
    double y0() const { return cy - h / 2.0; }
    double x1() const { return cx + w / 2.0; }
    double y1() const { return cy + h / 2.0; }
    double area() const { return w * h; }
    bool valid() const;
    void require_valid(const char* where) const;
};

// Box offsets: center shift in units of box size, log scale factors.
// rw/rh are clamped to +-ln(1000), rx/ry to +-100 so decoded boxes stay sane
// even when fed by an untrained regressor.
struct OffsetVector {
    double rx = 0.0;
    double ry = 0.0;
    double rw = 0.0;
    double rh = 0.0;

    OffsetVector clamped() const;
};

double offset_scale_clamp();  // ln(1000)
double offset_shift_clamp();  // 100

struct AnchorSpec {
    std::vector<double> ratios;  // aspect ratios w/h
    std::vector<double> scales;  // base side lengths in pixels
    double stride = 16.0;

    void validate() const;
};

enum class IouLabel { Positive, Negative, Ignore };

double iou(const Box& a, const Box& b);
Box decode_offsets(const Box& p, const OffsetVector& r);
OffsetVector encode_offsets(const Box& p, const Box& target);

// Anchors per grid cell: row-major cell order, then ratio-major, then
// scale-major. Center of cell (i, j) is ((j + 0.5) * stride, (i + 0.5) * stride).
std::vector<Box> generate_anchors(const AnchorSpec& spec, int grid_h, int grid_w);

std::vector<IouLabel> label_by_iou(const std::vector<Box>& anchors, const Box& gt, double pos_thr,
                                   double neg_thr);

// Greedy descending-score suppression. Ties break toward the lower index.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thr, int keep);

}  // namespace cract
