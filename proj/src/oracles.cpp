#include "cract/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cract/proposal.hpp"
#include "cract/solver.hpp"

namespace cract::oracle {

namespace {

float relu_or_id(float v, Activation act) { return act == Activation::Relu && v < 0.0f ? 0.0f : v; }

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

FeatureMap conv2d_naive(const FeatureMap& input, const DenseLayerParams& p) {
    int out_h = (input.height + 2 * p.padding - p.kernel_h) / p.stride + 1;
    int out_w = (input.width + 2 * p.padding - p.kernel_w) / p.stride + 1;
    FeatureMap out(p.out_channels, out_h, out_w, input.stride * p.stride);
    for (int oc = 0; oc < p.out_channels; ++oc) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = p.bias[oc];
                for (int ic = 0; ic < p.in_channels; ++ic) {
                    for (int ky = 0; ky < p.kernel_h; ++ky) {
                        for (int kx = 0; kx < p.kernel_w; ++kx) {
                            int iy = oy * p.stride - p.padding + ky;
                            int ix = ox * p.stride - p.padding + kx;
                            double v = 0.0;
                            if (iy >= 0 && iy < input.height && ix >= 0 && ix < input.width) {
                                v = input.at(ic, iy, ix);
                            }
                            double w = p.weights[((static_cast<size_t>(oc) * p.in_channels + ic) *
                                                      p.kernel_h +
                                                  ky) *
                                                     p.kernel_w +
                                                 kx];
                            acc += v * w;
                        }
                    }
                }
                out.at(oc, oy, ox) = static_cast<float>(acc);
            }
        }
    }
    if (p.activation == Activation::Softmax) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double mx = -1e300;
                for (int c = 0; c < p.out_channels; ++c) mx = std::max(mx, (double)out.at(c, y, x));
                double sum = 0.0;
                for (int c = 0; c < p.out_channels; ++c) sum += std::exp(out.at(c, y, x) - mx);
                for (int c = 0; c < p.out_channels; ++c) {
                    out.at(c, y, x) = static_cast<float>(std::exp(out.at(c, y, x) - mx) / sum);
                }
            }
        }
    } else {
        for (float& v : out.data) v = relu_or_id(v, p.activation);
    }
    return out;
}

std::vector<float> fully_connected_naive(const std::vector<float>& input,
                                         const DenseLayerParams& p) {
    std::vector<float> out(p.out_dim);
    for (int o = 0; o < p.out_dim; ++o) {
        double acc = p.bias[o];
        for (int i = 0; i < p.in_dim; ++i) {
            acc += static_cast<double>(p.weights[static_cast<size_t>(o) * p.in_dim + i]) * input[i];
        }
        out[o] = static_cast<float>(acc);
    }
    if (p.activation == Activation::Softmax) {
        double mx = -1e300;
        for (float v : out) mx = std::max(mx, (double)v);
        double sum = 0.0;
        for (float v : out) sum += std::exp(v - mx);
        for (float& v : out) v = static_cast<float>(std::exp(v - mx) / sum);
    } else {
        for (float& v : out) v = relu_or_id(v, p.activation);
    }
    return out;
}

namespace {

// scalar bilinear read with edge clamping (resize convention)
double read_clamped(const FeatureMap& m, int c, double y, double x) {
    y = std::min(std::max(y, 0.0), static_cast<double>(m.height - 1));
    x = std::min(std::max(x, 0.0), static_cast<double>(m.width - 1));
    int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    int y1 = std::min(y0 + 1, m.height - 1), x1 = std::min(x0 + 1, m.width - 1);
    double fy = y - y0, fx = x - x0;
    return m.at(c, y0, x0) * (1 - fy) * (1 - fx) + m.at(c, y0, x1) * (1 - fy) * fx +
           m.at(c, y1, x0) * fy * (1 - fx) + m.at(c, y1, x1) * fy * fx;
}

// scalar bilinear read with zero padding (roialign convention)
double read_zero_padded(const FeatureMap& m, int c, double y, double x) {
    int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    double fy = y - y0, fx = x - x0;
    double acc = 0.0;
    const double wts[2] = {1.0 - fy, fy};
    const double wtsx[2] = {1.0 - fx, fx};
    for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
            int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
            acc += wts[dy] * wtsx[dx] * m.at(c, yy, xx);
        }
    }
    return acc;
}

}  // namespace

FeatureMap resize_bilinear_naive(const FeatureMap& input, int out_h, int out_w) {
    FeatureMap out(input.channels, out_h, out_w,
                   input.stride * static_cast<float>(input.height) / static_cast<float>(out_h));
    for (int c = 0; c < input.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double sy = (y + 0.5) * input.height / out_h - 0.5;
                double sx = (x + 0.5) * input.width / out_w - 0.5;
                out.at(c, y, x) = static_cast<float>(read_clamped(input, c, sy, sx));
            }
        }
    }
    return out;
}

FeatureMap xcorr_naive(const FeatureMap& tmpl, const FeatureMap& search) {
    int rh = search.height - tmpl.height + 1;
    int rw = search.width - tmpl.width + 1;
    FeatureMap out(1, rh, rw, search.stride);
    size_t n = tmpl.data.size();
    for (int oy = 0; oy < rh; ++oy) {
        for (int ox = 0; ox < rw; ++ox) {
            double tm = 0.0, wm = 0.0;
            for (int c = 0; c < tmpl.channels; ++c) {
                for (int y = 0; y < tmpl.height; ++y) {
                    for (int x = 0; x < tmpl.width; ++x) {
                        tm += tmpl.at(c, y, x);
                        wm += search.at(c, oy + y, ox + x);
                    }
                }
            }
            tm /= n;
            wm /= n;
            double dot = 0.0, tn = 0.0, wn = 0.0;
            for (int c = 0; c < tmpl.channels; ++c) {
                for (int y = 0; y < tmpl.height; ++y) {
                    for (int x = 0; x < tmpl.width; ++x) {
                        double tv = tmpl.at(c, y, x) - tm;
                        double wv = search.at(c, oy + y, ox + x) - wm;
                        dot += tv * wv;
                        tn += tv * tv;
                        wn += wv * wv;
                    }
                }
            }
            double denom = std::sqrt(tn) * std::sqrt(wn);
            double ncc = denom > 0.0 ? dot / denom : 0.0;
            if (ncc > 1.0) ncc = 1.0;
            if (ncc < -1.0) ncc = -1.0;
            out.at(0, oy, ox) = static_cast<float>((ncc + 1.0) / 2.0);
        }
    }
    return out;
}

PooledFeature roialign_naive(const FeatureMap& fmap, const Box& box, int out_size,
                             int samples_per_bin) {
    PooledFeature out(fmap.channels, out_size, PoolKind::Plain, box);
    double x0 = (box.cx - box.w / 2.0) / fmap.stride;
    double y0 = (box.cy - box.h / 2.0) / fmap.stride;
    double bw = box.w / fmap.stride / out_size;
    double bh = box.h / fmap.stride / out_size;
    for (int c = 0; c < fmap.channels; ++c) {
        for (int by = 0; by < out_size; ++by) {
            for (int bx = 0; bx < out_size; ++bx) {
                double acc = 0.0;
                for (int sy = 0; sy < samples_per_bin; ++sy) {
                    for (int sx = 0; sx < samples_per_bin; ++sx) {
                        double y = y0 + (by + (sy + 0.5) / samples_per_bin) * bh - 0.5;
                        double x = x0 + (bx + (sx + 0.5) / samples_per_bin) * bw - 0.5;
                        acc += read_zero_padded(fmap, c, y, x);
                    }
                }
                out.at(c, by, bx) =
                    static_cast<float>(acc / (static_cast<double>(samples_per_bin) * samples_per_bin));
            }
        }
    }
    return out;
}

double box_mean_dense(const FeatureMap& fmap, const Box& box, int channel, int grid) {
    double x0 = (box.cx - box.w / 2.0) / fmap.stride;
    double y0 = (box.cy - box.h / 2.0) / fmap.stride;
    double bw = box.w / fmap.stride;
    double bh = box.h / fmap.stride;
    double acc = 0.0;
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            double y = y0 + (i + 0.5) * bh / grid - 0.5;
            double x = x0 + (j + 0.5) * bw / grid - 0.5;
            acc += read_zero_padded(fmap, channel, y, x);
        }
    }
    return acc / (static_cast<double>(grid) * grid);
}

std::vector<int> nms_naive(const std::vector<Box>& boxes, const std::vector<double>& scores,
                           double iou_thr, int keep) {
    auto overlap = [](const Box& a, const Box& b) {
        double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
        double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
        double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
        double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
        double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
        double ih = std::min(ay1, by1) - std::max(ay0, by0);
        if (iw <= 0 || ih <= 0) return 0.0;
        double inter = iw * ih;
        return inter / (a.w * a.h + b.w * b.h - inter);
    };

    std::vector<char> alive(boxes.size(), 1);
    std::vector<int> kept;
    while (static_cast<int>(kept.size()) < keep) {
        int best = -1;
        for (size_t i = 0; i < boxes.size(); ++i) {
            if (!alive[i]) continue;
            if (best < 0 || scores[i] > scores[best]) best = static_cast<int>(i);
        }
        if (best < 0) break;
        kept.push_back(best);
        alive[best] = 0;
        for (size_t i = 0; i < boxes.size(); ++i) {
            if (alive[i] && overlap(boxes[best], boxes[i]) > iou_thr) alive[i] = 0;
        }
    }
    return kept;
}

std::vector<double> cholesky_solve(std::vector<double> m, std::vector<double> b, int dim) {
    // in-place LL' factorization
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = m[static_cast<size_t>(i) * dim + j];
            for (int k = 0; k < j; ++k) {
                s -= m[static_cast<size_t>(i) * dim + k] * m[static_cast<size_t>(j) * dim + k];
            }
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky_solve: matrix not positive definite");
                m[static_cast<size_t>(i) * dim + j] = std::sqrt(s);
            } else {
                m[static_cast<size_t>(i) * dim + j] = s / m[static_cast<size_t>(j) * dim + j];
            }
        }
    }
    // forward then backward substitution
    for (int i = 0; i < dim; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= m[static_cast<size_t>(i) * dim + k] * b[k];
        b[i] = s / m[static_cast<size_t>(i) * dim + i];
    }
    for (int i = dim - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < dim; ++k) s -= m[static_cast<size_t>(k) * dim + i] * b[k];
        b[i] = s / m[static_cast<size_t>(i) * dim + i];
    }
    return b;
}

std::vector<double> ridge_closed_form(const std::vector<double>& a, int rows, int dim,
                                      const std::vector<double>& y,
                                      const std::vector<double>& reg) {
    std::vector<double> m(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> rhs(dim, 0.0);
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < dim; ++i) {
            rhs[i] += a[static_cast<size_t>(r) * dim + i] * y[r];
            for (int j = 0; j < dim; ++j) {
                m[static_cast<size_t>(i) * dim + j] +=
                    a[static_cast<size_t>(r) * dim + i] * a[static_cast<size_t>(r) * dim + j];
            }
        }
    }
    for (int i = 0; i < dim; ++i) m[static_cast<size_t>(i) * dim + i] += reg[i];
    return cholesky_solve(std::move(m), std::move(rhs), dim);
}

namespace {

FeatureMap random_map(Rng* rng, int c, int h, int w, float stride) {
    FeatureMap m(c, h, w, stride);
    for (float& v : m.data) v = static_cast<float>(rng->uniform(-1.0, 1.0));
    return m;
}

struct Check {
    const char* name;
    bool pass;
    double worst;
    double tolerance;
    int cases;
    double seconds;
};

void print_check(const Check& c) {
    std::printf("[%s] %-34s worst=%.3e tol=%.1e cases=%d (%.2f s)\n", c.pass ? "PASS" : "FAIL",
                c.name, c.worst, c.tolerance, c.cases, c.seconds);
}

Check check_conv2d(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 1));
    double worst = 0.0;
    const Activation acts[3] = {Activation::None, Activation::Relu, Activation::Softmax};
    for (int n = 0; n < 100; ++n) {
        int in_c = rng.uniform_int(1, 4), out_c = rng.uniform_int(1, 4);
        int k = rng.uniform_int(1, 3), stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
        int h = rng.uniform_int(k, 10), w = rng.uniform_int(k, 10);
        FeatureMap in = random_map(&rng, in_c, h, w, 8.0f);
        DenseLayerParams p = DenseLayerParams::conv(in_c, out_c, k, k, stride, pad, acts[n % 3]);
        for (float& v : p.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (float& v : p.bias) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        FeatureMap got = conv2d(in, p);
        FeatureMap ref = conv2d_naive(in, p);
        for (size_t i = 0; i < ref.data.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got.data[i]) - ref.data[i]));
        }
    }
    return {"conv2d vs naive-loop oracle", worst <= 1e-6, worst, 1e-6, 100, now_seconds() - t0};
}

Check check_fc(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 2));
    double worst = 0.0;
    const Activation acts[3] = {Activation::None, Activation::Relu, Activation::Softmax};
    for (int n = 0; n < 100; ++n) {
        int in = rng.uniform_int(1, 32), out = rng.uniform_int(1, 16);
        DenseLayerParams p = DenseLayerParams::fully_connected(in, out, acts[n % 3]);
        for (float& v : p.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (float& v : p.bias) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        std::vector<float> x(in);
        for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        std::vector<float> got = fully_connected(x, p);
        std::vector<float> ref = fully_connected_naive(x, p);
        for (size_t i = 0; i < ref.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got[i]) - ref[i]));
        }
    }
    return {"fully_connected vs dot oracle", worst <= 1e-6, worst, 1e-6, 100, now_seconds() - t0};
}

Check check_resize(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 3));
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        int c = rng.uniform_int(1, 3);
        FeatureMap in = random_map(&rng, c, rng.uniform_int(1, 8), rng.uniform_int(1, 8), 8.0f);
        int oh = rng.uniform_int(1, 12), ow = rng.uniform_int(1, 12);
        FeatureMap got = resize_bilinear(in, oh, ow);
        FeatureMap ref = resize_bilinear_naive(in, oh, ow);
        for (size_t i = 0; i < ref.data.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got.data[i]) - ref.data[i]));
        }
    }
    return {"resize_bilinear vs scalar oracle", worst <= 1e-6, worst, 1e-6, 100, now_seconds() - t0};
}

Check check_xcorr(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 4));
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        int c = rng.uniform_int(1, 4);
        int th = rng.uniform_int(1, 5), tw = rng.uniform_int(1, 5);
        int h = rng.uniform_int(th, 10), w = rng.uniform_int(tw, 10);
        FeatureMap t = random_map(&rng, c, th, tw, 16.0f);
        FeatureMap s = random_map(&rng, c, h, w, 16.0f);
        FeatureMap got = xcorr(t, s);
        FeatureMap ref = xcorr_naive(t, s);
        for (size_t i = 0; i < ref.data.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got.data[i]) - ref.data[i]));
        }
    }
    return {"xcorr vs sliding-window oracle", worst <= 1e-5, worst, 1e-5, 100, now_seconds() - t0};
}

Check check_roialign(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 5));
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        int c = rng.uniform_int(1, 3);
        int h = rng.uniform_int(4, 12), w = rng.uniform_int(4, 12);
        float stride = static_cast<float>(rng.uniform_int(1, 3) * 4);
        FeatureMap m = random_map(&rng, c, h, w, stride);
        Box box(rng.uniform(0.0, w * stride), rng.uniform(0.0, h * stride),
                rng.uniform(0.5, w * stride), rng.uniform(0.5, h * stride));
        int out = rng.uniform_int(1, 7), spb = rng.uniform_int(1, 3);
        PooledFeature got = roialign(m, box, out, spb);
        PooledFeature ref = roialign_naive(m, box, out, spb);
        for (size_t i = 0; i < ref.data.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(got.data[i]) - ref.data[i]));
        }
    }
    return {"roialign vs brute-force oracle", worst <= 1e-6, worst, 1e-6, 100, now_seconds() - t0};
}

Check check_offsets(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 6));
    double worst = 0.0;
    for (int n = 0; n < 10000; ++n) {
        Box p(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.1, 80), rng.uniform(0.1, 80));
        Box q(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.1, 80), rng.uniform(0.1, 80));
        Box back = decode_offsets(p, encode_offsets(p, q));
        worst = std::max({worst, std::abs(back.cx - q.cx), std::abs(back.cy - q.cy),
                          std::abs(back.w - q.w), std::abs(back.h - q.h)});
    }
    return {"encode/decode offset round trip", worst <= 1e-9, worst, 1e-9, 10000,
            now_seconds() - t0};
}

Check check_nms(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 7));
    int mismatches = 0;
    for (int n = 0; n < 1000; ++n) {
        int count = rng.uniform_int(1, 20);
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (int i = 0; i < count; ++i) {
            boxes.emplace_back(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 40),
                               rng.uniform(1, 40));
            // quantized scores make ties common enough to exercise tie-breaks
            scores.push_back(rng.uniform_int(0, 9) / 10.0);
        }
        double thr = rng.uniform(0.1, 0.9);
        int keep = rng.uniform_int(1, 20);
        if (nms(boxes, scores, thr, keep) != nms_naive(boxes, scores, thr, keep)) ++mismatches;
    }
    return {"nms vs exhaustive oracle", mismatches == 0, static_cast<double>(mismatches), 0.0, 1000,
            now_seconds() - t0};
}

Check check_cg(uint64_t seed) {
    double t0 = now_seconds();
    Rng rng(mix_seed(seed, 8));
    double worst = 0.0;
    for (int n = 0; n < 200; ++n) {
        int dim = rng.uniform_int(1, 64);
        int rows = rng.uniform_int(dim, 2 * dim + 8);
        double scale = 1.0 / std::sqrt(static_cast<double>(rows));
        std::vector<double> a(static_cast<size_t>(rows) * dim);
        std::vector<double> y(rows);
        for (double& v : a) v = rng.uniform(-1.0, 1.0) * scale;
        for (double& v : y) v = rng.uniform(-1.0, 1.0);
        std::vector<double> reg(dim, rng.uniform(0.1, 1.0));
        std::vector<double> x0(dim, 0.0);
        CgResult got = ridge_normal_cg(a, rows, dim, y, reg, x0, 1e-10, dim + 5);
        if (got.relative_residual > 1e-8) worst = std::max(worst, 1.0);  // residual invariant
        std::vector<double> ref = ridge_closed_form(a, rows, dim, y, reg);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < dim; ++i) {
            num += (got.x[i] - ref[i]) * (got.x[i] - ref[i]);
            den += ref[i] * ref[i];
        }
        worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-300));
    }
    return {"conjugate gradient vs dense ridge", worst <= 1e-5, worst, 1e-5, 200,
            now_seconds() - t0};
}

}  // namespace

int run_all(uint64_t seed, bool verbose) {
    Check checks[] = {check_conv2d(seed), check_fc(seed),  check_resize(seed), check_xcorr(seed),
                      check_roialign(seed), check_offsets(seed), check_nms(seed), check_cg(seed)};
    int failures = 0;
    for (const Check& c : checks) {
        if (verbose || !c.pass) print_check(c);
        if (!c.pass) ++failures;
    }
    return failures;
}

}  // namespace cract::oracle
