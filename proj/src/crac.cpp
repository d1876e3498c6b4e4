#include "cract/crac.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cract {

PoolingSpec PoolingSpec::make(int channels, bool pyramid) {
    PoolingSpec s;
    s.pyramid = pyramid;
    s.params = PyramidParams::make_default(channels);
    return s;
}

PooledFeature PoolingSpec::pool(const FeatureMap& fmap, const Box& box) const {
    if (pyramid) return pyramid_roialign(fmap, box, params);
    return roialign(fmap, box, plain_size, samples_per_bin);
}

RegressorModel RegressorModel::make_default(int c, uint64_t seed) {
    RegressorModel m;
    m.head = HeadStack::make(2 * c, c, 6, {128, 64}, 4, mix_seed(seed, 0x4e69));
    return m;
}

IdentifierModel IdentifierModel::make_default(int c, uint64_t seed) {
    IdentifierModel m;
    m.head = HeadStack::make(2 * c, c, 6, {128, 64}, 2, mix_seed(seed, 0x1de0));
    m.mode = IdentifierMode::SoftmaxPositive;
    return m;
}

DiscriminatorModel DiscriminatorModel::make_default(int c, uint64_t seed) {
    DiscriminatorModel m;
    m.stack = HeadStack::make(c, c, 6, {64}, 1, mix_seed(seed, 0xd15c));
    return m;
}

void SampleMemory::append(MemoryEntry entry) {
    if (entry.label != 0.0f && entry.label != 1.0f) {
        throw std::invalid_argument("SampleMemory: labels must be binary");
    }
    entry.feature.validate();
    if (entry.origin == SampleOrigin::Initial) {
        initial_.push_back(std::move(entry));
    } else {
        tracked_.push_back(std::move(entry));
    }
    while (capacity_ > 0 && size() > capacity_ && !tracked_.empty()) {
        tracked_.pop_front();
    }
}

std::vector<const MemoryEntry*> SampleMemory::view_all() const {
    std::vector<const MemoryEntry*> out;
    out.reserve(size());
    for (const auto& e : initial_) out.push_back(&e);
    for (const auto& e : tracked_) out.push_back(&e);
    return out;
}

std::vector<const MemoryEntry*> SampleMemory::training_view(int min_frame,
                                                            size_t max_tracked) const {
    std::vector<const MemoryEntry*> out;
    for (const auto& e : initial_) out.push_back(&e);
    std::vector<const MemoryEntry*> recent;
    for (const auto& e : tracked_) {
        if (e.frame_index >= min_frame) recent.push_back(&e);
    }
    if (max_tracked == 0 || recent.size() <= max_tracked) {
        out.insert(out.end(), recent.begin(), recent.end());
    } else {
        for (size_t i = 0; i < max_tracked; ++i) {
            out.push_back(recent[i * recent.size() / max_tracked]);
        }
    }
    return out;
}

namespace {

std::vector<float> concat_pooled(const PooledFeature& a, const PooledFeature& b) {
    if (a.channels != b.channels || a.size != b.size) {
        throw std::invalid_argument("concat_pooled: feature shapes differ");
    }
    std::vector<float> out;
    out.reserve(a.data.size() + b.data.size());
    out.insert(out.end(), a.data.begin(), a.data.end());
    out.insert(out.end(), b.data.begin(), b.data.end());
    return out;
}

void require_head_input(const HeadStack& head, const PooledFeature& f, const char* where) {
    if (head.conv.in_channels % f.channels != 0 || head.spatial != f.size) {
        throw std::invalid_argument(std::string(where) + ": feature shape does not match model");
    }
}

}  // namespace

OffsetVector box_regress(const PooledFeature& f, const PooledFeature& f_init,
                         const RegressorModel& model) {
    require_head_input(model.head, f, "box_regress");
    std::vector<float> out = head_forward(model.head, concat_pooled(f, f_init), nullptr);
    OffsetVector r;
    r.rx = out[0];
    r.ry = out[1];
    r.rw = out[2];
    r.rh = out[3];
    return r.clamped();
}

std::pair<Box, PooledFeature> align_proposal(const Proposal& p, const OffsetVector& r,
                                             const FeatureMap& x34, const PoolingSpec& pooling) {
    Box refined = decode_offsets(p.box, r);
    PooledFeature aligned = pooling.pool(x34, refined);
    return {refined, std::move(aligned)};
}

std::pair<std::array<double, 2>, double> identify(const PooledFeature& f,
                                                  const PooledFeature& f_init,
                                                  const IdentifierModel& model) {
    if (model.mode == IdentifierMode::CosineFallback) {
        if (f.data.size() != f_init.data.size()) {
            throw std::invalid_argument("identify: feature shapes differ");
        }
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t i = 0; i < f.data.size(); ++i) {
            dot += static_cast<double>(f.data[i]) * f_init.data[i];
            na += static_cast<double>(f.data[i]) * f.data[i];
            nb += static_cast<double>(f_init.data[i]) * f_init.data[i];
        }
        double denom = std::sqrt(na) * std::sqrt(nb);
        double cosine = denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
        double pos = (1.0 + cosine) / 2.0;
        return {{pos, 1.0 - pos}, pos};
    }

    require_head_input(model.head, f, "identify");
    std::vector<float> logits = head_forward(model.head, concat_pooled(f, f_init), nullptr);
    double mx = std::max(logits[0], logits[1]);
    double e0 = std::exp(logits[0] - mx);
    double e1 = std::exp(logits[1] - mx);
    double pos = e0 / (e0 + e1);  // index 0 is the positive class
    return {{pos, 1.0 - pos}, pos};
}

double discriminate(const PooledFeature& f, const DiscriminatorModel& model) {
    require_head_input(model.stack, f, "discriminate");
    std::vector<float> out = head_forward(model.stack, f.data, nullptr);
    return std::clamp(static_cast<double>(out[0]), 0.0, 1.0);
}

std::vector<double> discriminator_w(const DiscriminatorModel& model) {
    std::vector<double> w;
    for (const auto& fc : model.stack.fcs) {
        for (float v : fc.weights) w.push_back(v);
        for (float v : fc.bias) w.push_back(v);
    }
    return w;
}

void set_discriminator_w(DiscriminatorModel* model, const std::vector<double>& w) {
    size_t i = 0;
    for (auto& fc : model->stack.fcs) {
        for (float& v : fc.weights) v = static_cast<float>(w.at(i++));
        for (float& v : fc.bias) v = static_cast<float>(w.at(i++));
    }
    if (i != w.size()) throw std::invalid_argument("set_discriminator_w: length mismatch");
}

namespace {

// Raw (unclamped) discriminator output; the ridge loss is defined on this.
double discriminator_raw(const PooledFeature& f, const DiscriminatorModel& model) {
    std::vector<float> out = head_forward(model.stack, f.data, nullptr);
    return out[0];
}

double weight_penalty(const DiscriminatorModel& model, double lambda) {
    double acc = 0.0;
    for (const auto& fc : model.stack.fcs) {
        for (float v : fc.weights) acc += static_cast<double>(v) * v;
    }
    return lambda * acc;
}

std::vector<std::vector<float>> conv_cache(const std::vector<const MemoryEntry*>& samples,
                                           const DiscriminatorModel& model) {
    int cells = model.stack.spatial * model.stack.spatial;
    std::vector<std::vector<float>> out;
    out.reserve(samples.size());
    for (const MemoryEntry* e : samples) {
        for (float v : e->feature.data) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("train_discriminator: non-finite features");
            }
        }
        out.push_back(conv1x1_forward(model.stack.conv, e->feature.data, cells));
    }
    return out;
}

double objective_from_cache(const std::vector<std::vector<float>>& zs,
                            const std::vector<const MemoryEntry*>& samples,
                            const DiscriminatorModel& model, double lambda) {
    double acc = 0.0;
    for (size_t j = 0; j < zs.size(); ++j) {
        std::vector<float> out = fc_chain_forward(model.stack.fcs, zs[j], nullptr);
        double d = static_cast<double>(out[0]) - samples[j]->label;
        acc += d * d;
    }
    return acc + weight_penalty(model, lambda);
}

// CG ridge solve of the final fc layer given fixed fc1 activations.
int solve_last_layer(DiscriminatorModel* model, const std::vector<std::vector<float>>& zs,
                     const std::vector<const MemoryEntry*>& samples, double lambda, int max_iters,
                     double tol) {
    DenseLayerParams& fc2 = model->stack.fcs.back();
    int hdim = fc2.in_dim;
    int dim = hdim + 1;  // bias column
    int rows = static_cast<int>(zs.size());

    std::vector<double> a(static_cast<size_t>(rows) * dim);
    std::vector<double> y(rows);
    std::vector<DenseLayerParams> first_fcs(model->stack.fcs.begin(), model->stack.fcs.end() - 1);
    for (int j = 0; j < rows; ++j) {
        std::vector<float> h = fc_chain_forward(first_fcs, zs[j], nullptr);
        for (int i = 0; i < hdim; ++i) a[static_cast<size_t>(j) * dim + i] = h[i];
        a[static_cast<size_t>(j) * dim + hdim] = 1.0;
        y[j] = samples[j]->label;
    }

    std::vector<double> reg(dim, lambda);
    reg[hdim] = 0.0;  // intercept unpenalized
    std::vector<double> x0(dim);
    for (int i = 0; i < hdim; ++i) x0[i] = fc2.weights[i];
    x0[hdim] = fc2.bias[0];

    CgResult res = ridge_normal_cg(a, rows, dim, y, reg, x0, tol, max_iters);
    for (int i = 0; i < hdim; ++i) fc2.weights[i] = static_cast<float>(res.x[i]);
    fc2.bias[0] = static_cast<float>(res.x[hdim]);
    return res.iterations;
}

// One gradient step on the first fc layer with backtracking line search; the
// step is skipped when no decrease is found.
void refine_first_layer(DiscriminatorModel* model, const std::vector<std::vector<float>>& zs,
                        const std::vector<const MemoryEntry*>& samples, double lambda) {
    DenseLayerParams& fc1 = model->stack.fcs.front();
    const DenseLayerParams& fc2 = model->stack.fcs.back();

    std::vector<double> gw(fc1.weights.size(), 0.0);
    std::vector<double> gb(fc1.bias.size(), 0.0);
    for (size_t j = 0; j < zs.size(); ++j) {
        std::vector<std::vector<float>> cache;
        std::vector<float> out = fc_chain_forward(model->stack.fcs, zs[j], &cache);
        double d = 2.0 * (static_cast<double>(out[0]) - samples[j]->label);
        const std::vector<float>& h = cache[0];
        for (int i = 0; i < fc1.out_dim; ++i) {
            if (h[i] <= 0.0f) continue;  // relu mask
            double dh = d * fc2.weights[i];
            gb[i] += dh;
            double* gwr = gw.data() + static_cast<size_t>(i) * fc1.in_dim;
            const float* z = zs[j].data();
            for (int k = 0; k < fc1.in_dim; ++k) gwr[k] += dh * z[k];
        }
    }
    double gnorm2 = 0.0;
    for (size_t i = 0; i < gw.size(); ++i) {
        gw[i] += 2.0 * lambda * fc1.weights[i];
        gnorm2 += gw[i] * gw[i];
    }
    for (double v : gb) gnorm2 += v * v;
    if (gnorm2 == 0.0) return;

    double before = objective_from_cache(zs, samples, *model, lambda);
    std::vector<float> w_save = fc1.weights;
    std::vector<float> b_save = fc1.bias;

    double wnorm = 0.0;
    for (float v : fc1.weights) wnorm += static_cast<double>(v) * v;
    double step = 0.05 * (std::sqrt(wnorm) + 1.0) / std::sqrt(gnorm2);
    for (int attempt = 0; attempt < 12; ++attempt) {
        for (size_t i = 0; i < fc1.weights.size(); ++i) {
            fc1.weights[i] = w_save[i] - static_cast<float>(step * gw[i]);
        }
        for (size_t i = 0; i < fc1.bias.size(); ++i) {
            fc1.bias[i] = b_save[i] - static_cast<float>(step * gb[i]);
        }
        if (objective_from_cache(zs, samples, *model, lambda) <= before) return;
        step *= 0.5;
    }
    fc1.weights = w_save;
    fc1.bias = b_save;
}

}  // namespace

double ridge_objective(const std::vector<const MemoryEntry*>& samples,
                       const DiscriminatorModel& model, double lambda) {
    if (samples.empty()) throw std::invalid_argument("ridge_objective: empty sample set");
    double acc = 0.0;
    for (const MemoryEntry* e : samples) {
        double d = discriminator_raw(e->feature, model) - e->label;
        acc += d * d;
    }
    return acc + weight_penalty(model, lambda);
}

std::vector<double> ridge_gradient(const std::vector<const MemoryEntry*>& samples,
                                   const DiscriminatorModel& model, double lambda) {
    if (samples.empty()) throw std::invalid_argument("ridge_gradient: empty sample set");
    int cells = model.stack.spatial * model.stack.spatial;
    std::vector<DenseLayerParams> grads = model.stack.fcs;
    for (auto& g : grads) {
        std::fill(g.weights.begin(), g.weights.end(), 0.0f);
        std::fill(g.bias.begin(), g.bias.end(), 0.0f);
    }
    for (const MemoryEntry* e : samples) {
        std::vector<float> z = conv1x1_forward(model.stack.conv, e->feature.data, cells);
        std::vector<std::vector<float>> cache;
        std::vector<float> out = fc_chain_forward(model.stack.fcs, z, &cache);
        std::vector<float> dout = {2.0f * (out[0] - e->label)};
        fc_chain_backward(model.stack.fcs, z, cache, dout, &grads, nullptr);
    }
    std::vector<double> flat;
    for (size_t l = 0; l < grads.size(); ++l) {
        for (size_t i = 0; i < grads[l].weights.size(); ++i) {
            flat.push_back(grads[l].weights[i] + 2.0 * lambda * model.stack.fcs[l].weights[i]);
        }
        for (float v : grads[l].bias) flat.push_back(v);
    }
    return flat;
}

DiscriminatorModel train_discriminator(const DiscriminatorModel& model,
                                       const std::vector<const MemoryEntry*>& samples,
                                       double lambda, int max_iters, double tol,
                                       DiscriminatorTrainStats* stats) {
    if (samples.empty()) throw std::invalid_argument("train_discriminator: empty sample set");
    if (!(lambda > 0.0)) throw std::invalid_argument("train_discriminator: lambda must be > 0");
    model.stack.validate();

    DiscriminatorModel out = model;
    out.lambda = lambda;
    std::vector<std::vector<float>> zs = conv_cache(samples, out);

    double before = objective_from_cache(zs, samples, out, lambda);
    int cg_total = 0;
    for (int round = 0; round < 2; ++round) {
        cg_total += solve_last_layer(&out, zs, samples, lambda, max_iters, tol);
        refine_first_layer(&out, zs, samples, lambda);
    }
    cg_total += solve_last_layer(&out, zs, samples, lambda, max_iters, tol);

    if (stats) {
        stats->objective_before = before;
        stats->objective_after = objective_from_cache(zs, samples, out, lambda);
        stats->cg_iterations = cg_total;
    }
    return out;
}

std::vector<MemoryEntry> mine_hard_negatives(
    const std::vector<std::pair<PooledFeature, Box>>& candidates, const std::vector<double>& scores,
    const Box& gt, int quota, int frame_index) {
    if (candidates.size() != scores.size()) {
        throw std::invalid_argument("mine_hard_negatives: candidate/score length mismatch");
    }
    if (quota < 0) throw std::invalid_argument("mine_hard_negatives: quota must be >= 0");

    std::vector<int> eligible;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (iou(candidates[i].second, gt) < 0.3) eligible.push_back(static_cast<int>(i));
    }
    std::stable_sort(eligible.begin(), eligible.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    if (static_cast<int>(eligible.size()) > quota) eligible.resize(quota);

    std::vector<MemoryEntry> out;
    for (int idx : eligible) {
        out.push_back({candidates[idx].first, 0.0f, frame_index, SampleOrigin::HardNegative});
    }
    return out;
}

double fuse_scores(double ident_pos, double discrim, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fuse_scores: alpha out of [0,1]");
    return alpha * ident_pos + (1.0 - alpha) * discrim;
}

double ide_loss(const std::array<double, 2>& logits, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("ide_loss: label must be 0 or 1");
    double mx = std::max(logits[0], logits[1]);
    double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
    return lse - logits[label];
}

double reg_loss(const OffsetVector& pred, const OffsetVector& target) {
    return smooth_l1(pred.rx - target.rx) + smooth_l1(pred.ry - target.ry) +
           smooth_l1(pred.rw - target.rw) + smooth_l1(pred.rh - target.rh);
}

}  // namespace cract
