#include "cract/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cract {

void Config::validate() const {
    if (n_proposals < 1 || update_interval < 1 || n_pos < 1 || n_neg < 1 || init_pos < 1 ||
        init_neg < 1) {
        throw std::invalid_argument("Config: counts must be >= 1");
    }
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0) {
        throw std::invalid_argument("Config: alpha and beta must lie in [0,1]");
    }
    if (anchor_iou_pos < anchor_iou_neg) {
        throw std::invalid_argument("Config: anchor IoU thresholds out of order");
    }
    if (anchor_ratios.empty() || !(anchor_scale > 0.0)) {
        throw std::invalid_argument("Config: anchor spec invalid");
    }
    if (template_size < 16 || template_size % 16 != 0 || search_size < 16 ||
        search_size % 16 != 0 || search_size <= template_size) {
        throw std::invalid_argument("Config: crop sizes must be multiples of 16, search > template");
    }
    if (!(lambda > 0.0) || !(cg_tol > 0.0) || cg_max_iters < 1) {
        throw std::invalid_argument("Config: solver settings invalid");
    }
    if (nms_threshold < 0.0 || nms_threshold > 1.0) {
        throw std::invalid_argument("Config: nms_threshold out of [0,1]");
    }
    if (pyramid_levels.empty()) throw std::invalid_argument("Config: pyramid_levels empty");
    if (memory_cycles < 1 || short_window_frames < 1) {
        throw std::invalid_argument("Config: memory settings invalid");
    }
    if (hard_negative_quota < 0 || hard_negative_quota > n_neg) {
        throw std::invalid_argument("Config: hard_negative_quota out of range");
    }
}

namespace {

std::vector<double> parse_double_list(const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::invalid_argument("expected boolean, got '" + v + "'");
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Config: cannot open " + path);

    Config cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r\n");
        line = line.substr(first, last - first + 1);

        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("Config: line " + std::to_string(line_no) + ": expected key=value");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        key = trim(key);
        value = trim(value);

        try {
            if (key == "n_proposals") cfg.n_proposals = std::stoi(value);
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "beta") cfg.beta = std::stod(value);
            else if (key == "update_interval") cfg.update_interval = std::stoi(value);
            else if (key == "n_pos") cfg.n_pos = std::stoi(value);
            else if (key == "n_neg") cfg.n_neg = std::stoi(value);
            else if (key == "init_pos") cfg.init_pos = std::stoi(value);
            else if (key == "init_neg") cfg.init_neg = std::stoi(value);
            else if (key == "anchor_ratios") cfg.anchor_ratios = parse_double_list(value);
            else if (key == "anchor_scale") cfg.anchor_scale = std::stod(value);
            else if (key == "anchor_iou_pos") cfg.anchor_iou_pos = std::stod(value);
            else if (key == "anchor_iou_neg") cfg.anchor_iou_neg = std::stod(value);
            else if (key == "refine_iou") cfg.refine_iou = std::stod(value);
            else if (key == "pyramid_levels") {
                cfg.pyramid_levels.clear();
                for (double v : parse_double_list(value)) cfg.pyramid_levels.push_back(static_cast<int>(v));
            }
            else if (key == "lambda") cfg.lambda = std::stod(value);
            else if (key == "cg_tol") cfg.cg_tol = std::stod(value);
            else if (key == "cg_max_iters") cfg.cg_max_iters = std::stoi(value);
            else if (key == "nms_threshold") cfg.nms_threshold = std::stod(value);
            else if (key == "template_size") cfg.template_size = std::stoi(value);
            else if (key == "search_size") cfg.search_size = std::stoi(value);
            else if (key == "template_context") cfg.template_context = std::stod(value);
            else if (key == "search_context") cfg.search_context = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "refinement") {
                if (value == "cascaded") cfg.refinement = Refinement::Cascaded;
                else if (value == "parallel") cfg.refinement = Refinement::Parallel;
                else throw std::invalid_argument("expected cascaded|parallel");
            }
            else if (key == "classification") {
                if (value == "joint") cfg.classification = Classification::Joint;
                else if (value == "identifier") cfg.classification = Classification::IdentifierOnly;
                else if (value == "discriminator") cfg.classification = Classification::DiscriminatorOnly;
                else throw std::invalid_argument("expected joint|identifier|discriminator");
            }
            else if (key == "pooling") {
                if (value == "pyramid") cfg.pooling = Pooling::Pyramid;
                else if (value == "plain") cfg.pooling = Pooling::Plain;
                else throw std::invalid_argument("expected pyramid|plain");
            }
            else if (key == "identifier_mode") {
                if (value == "softmax") cfg.identifier_mode = IdentifierMode::SoftmaxPositive;
                else if (value == "cosine") cfg.identifier_mode = IdentifierMode::CosineFallback;
                else throw std::invalid_argument("expected softmax|cosine");
            }
            else if (key == "fit_heads") cfg.fit_heads = parse_bool(value);
            else if (key == "head_train_steps") cfg.head_train_steps = std::stoi(value);
            else if (key == "head_learning_rate") cfg.head_learning_rate = std::stod(value);
            else if (key == "head_jitter_pool") cfg.head_jitter_pool = std::stoi(value);
            else if (key == "head_batch") cfg.head_batch = std::stoi(value);
            else if (key == "memory_cycles") cfg.memory_cycles = std::stoi(value);
            else if (key == "short_window_frames") cfg.short_window_frames = std::stoi(value);
            else if (key == "max_update_tracked") cfg.max_update_tracked = std::stoi(value);
            else if (key == "hard_negative_quota") cfg.hard_negative_quota = std::stoi(value);
            else if (key == "jitter_center_sigma") cfg.jitter_center_sigma = std::stod(value);
            else if (key == "jitter_scale_sigma") cfg.jitter_scale_sigma = std::stod(value);
            else throw std::invalid_argument("unknown key '" + key + "'");
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("Config: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

HeadModels HeadModels::make(const Config& cfg) {
    cfg.validate();
    HeadModels m;
    m.backbone = BackboneParams::make_default(mix_seed(cfg.seed, 0xbb01));
    int c = m.backbone.channels_per_level;

    m.pooling.pyramid = cfg.pooling == Pooling::Pyramid;
    m.pooling.params = PyramidParams::make_default(c, cfg.pyramid_levels);
    m.pooling.plain_size = cfg.pyramid_levels.front();
    m.pooling.samples_per_bin = 2;

    m.regressor = RegressorModel::make_default(c, mix_seed(cfg.seed, 0x4e01));
    m.identifier = IdentifierModel::make_default(c, mix_seed(cfg.seed, 0x1d01));
    m.identifier.mode = cfg.identifier_mode;
    m.discriminator = DiscriminatorModel::make_default(c, mix_seed(cfg.seed, 0xd501));
    m.discriminator.lambda = cfg.lambda;
    m.rpn = RpnHeads::correlation_only();
    return m;
}

namespace {

Box clamp_center_to_image(const Box& b, int width, int height) {
    Box out = b;
    out.cx = std::clamp(out.cx, 0.0, static_cast<double>(width));
    out.cy = std::clamp(out.cy, 0.0, static_cast<double>(height));
    return out;
}

Box clamp_to_patch(const Box& b, int patch_size) {
    Box out = b;
    out.cx = std::clamp(out.cx, 0.0, static_cast<double>(patch_size));
    out.cy = std::clamp(out.cy, 0.0, static_cast<double>(patch_size));
    out.w = std::clamp(out.w, 2.0, 2.0 * patch_size);
    out.h = std::clamp(out.h, 2.0, 2.0 * patch_size);
    return out;
}

// background sample: uniform center over the patch, log-normal size jitter,
// rejected until it clears the IoU ceiling
Box sample_negative(const Box& gt, int patch_size, Rng* rng, double iou_max) {
    Box candidate = gt;
    for (int tries = 0; tries < 1000; ++tries) {
        candidate = Box(rng->uniform(0.0, patch_size), rng->uniform(0.0, patch_size),
                        std::clamp(gt.w * std::exp(rng->normal() * 0.3), 4.0, 1.0 * patch_size),
                        std::clamp(gt.h * std::exp(rng->normal() * 0.3), 4.0, 1.0 * patch_size));
        if (iou(candidate, gt) < iou_max) return candidate;
    }
    return candidate;
}

}  // namespace

Box jitter_box(const Box& reference, Rng* rng, double sigma_center, double sigma_scale,
               double iou_min, double iou_max, int max_tries) {
    reference.require_valid("jitter_box");
    for (int t = 0; t < max_tries; ++t) {
        Box b(reference.cx + rng->normal() * sigma_center * reference.w,
              reference.cy + rng->normal() * sigma_center * reference.h,
              reference.w * std::exp(rng->normal() * sigma_scale),
              reference.h * std::exp(rng->normal() * sigma_scale));
        double v = iou(b, reference);
        if (v > iou_min && v <= iou_max) return b;
    }
    if (iou_max >= 1.0 && iou_min < 1.0) return reference;
    throw std::runtime_error("jitter_box: could not sample requested IoU band");
}

TrackerState init(const ImagePatch& frame, const Box& b1, const Config& cfg, HeadModels models) {
    cfg.validate();
    frame.validate();
    b1.require_valid("init");

    TrackerState st;
    st.cfg = cfg;
    st.models = std::move(models);
    st.rng = Rng(mix_seed(cfg.seed, 0x77ac));

    Box b1c = clamp_center_to_image(b1, frame.width, frame.height);

    CropResult zc = crop_region(frame, b1c, cfg.template_context, cfg.template_size);
    st.z34 = extract_fused(zc.patch, st.models.backbone);
    st.f_init = st.models.pooling.pool(st.z34, zc.map.to_patch(b1c));

    int grid = cfg.search_size / 16;
    st.response_h = grid - st.z34.height + 1;
    st.response_w = grid - st.z34.width + 1;
    if (st.response_h < 1 || st.response_w < 1) {
        throw std::invalid_argument("init: template feature grid larger than search grid");
    }
    AnchorSpec aspec{cfg.anchor_ratios, {cfg.anchor_scale}, 16.0};
    st.anchors = generate_anchors(aspec, st.response_h, st.response_w);
    // shift anchor centers onto the template-window placements of the
    // valid-correlation response grid
    double off_x = (st.z34.width - 1) * 16.0 / 2.0;
    double off_y = (st.z34.height - 1) * 16.0 / 2.0;
    for (Box& a : st.anchors) {
        a.cx += off_x;
        a.cy += off_y;
    }

    size_t capacity = static_cast<size_t>(cfg.init_pos) + cfg.init_neg +
                      static_cast<size_t>(cfg.memory_cycles) * (cfg.n_pos + cfg.n_neg);
    st.memory = SampleMemory(capacity);

    CropResult xc = crop_region(frame, b1c, cfg.search_context, cfg.search_size);
    FeatureMap x34 = extract_fused(xc.patch, st.models.backbone);
    Box b1_patch = xc.map.to_patch(b1c);

    Rng sampler = st.rng.fork(0x5a01);
    for (int i = 0; i < cfg.init_pos; ++i) {
        Box jb = jitter_box(b1_patch, &sampler, cfg.jitter_center_sigma, cfg.jitter_scale_sigma,
                            cfg.refine_iou, 1.0);
        st.memory.append({st.models.pooling.pool(x34, jb), 1.0f, 1, SampleOrigin::Initial});
    }
    for (int i = 0; i < cfg.init_neg; ++i) {
        Box nb = sample_negative(b1_patch, cfg.search_size, &sampler, cfg.anchor_iou_neg);
        st.memory.append({st.models.pooling.pool(x34, nb), 0.0f, 1, SampleOrigin::Initial});
    }

    DiscriminatorTrainStats stats;
    st.models.discriminator = train_discriminator(st.models.discriminator, st.memory.view_all(),
                                                  cfg.lambda, cfg.cg_max_iters, cfg.cg_tol, &stats);
    st.update_log.push_back(stats);

    if (cfg.fit_heads) {
        Rng head_rng = st.rng.fork(0x6e0d);
        std::vector<JitterSample> pool = build_jitter_pool(x34, b1_patch, st.models.pooling, cfg,
                                                           &head_rng);
        fit_regressor(&st.models.regressor, pool, st.f_init, cfg, &head_rng);
        if (st.models.identifier.mode == IdentifierMode::SoftmaxPositive) {
            fit_identifier(&st.models.identifier, pool, st.f_init, cfg, &head_rng);
        }
    }

    st.current_box = b1c;
    st.frame_index = 1;
    st.frames_since_update = 0;
    return st;
}

int select_best(const std::vector<Proposal>& proposals, const ScoreSet& scores, double beta) {
    if (proposals.empty()) throw std::invalid_argument("select_best: empty proposal list");
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("select_best: beta out of [0,1]");
    if (scores.fused.size() != proposals.size() || scores.coarse.size() != proposals.size()) {
        throw std::invalid_argument("select_best: score set size mismatch");
    }
    int best = 0;
    double best_v = beta * scores.fused[0] + (1.0 - beta) * scores.coarse[0];
    for (size_t i = 1; i < proposals.size(); ++i) {
        double v = beta * scores.fused[i] + (1.0 - beta) * scores.coarse[i];
        if (v > best_v) {
            best = static_cast<int>(i);
            best_v = v;
        }
    }
    return best;
}

std::vector<MemoryEntry> collect_samples(TrackerState* st, const Box& bt_patch,
                                         const FeatureMap& x34,
                                         const std::vector<std::pair<PooledFeature, Box>>& proposals,
                                         const std::vector<double>& proposal_scores) {
    const Config& cfg = st->cfg;
    int t = st->frame_index;
    std::vector<MemoryEntry> delta;
    delta.reserve(cfg.n_pos + cfg.n_neg);

    for (int i = 0; i < cfg.n_pos; ++i) {
        Box jb = jitter_box(bt_patch, &st->rng, cfg.jitter_center_sigma, cfg.jitter_scale_sigma,
                            cfg.refine_iou, 1.0);
        delta.push_back({st->models.pooling.pool(x34, jb), 1.0f, t, SampleOrigin::Tracked});
    }

    int quota = std::min(cfg.hard_negative_quota, cfg.n_neg);
    std::vector<MemoryEntry> hard =
        mine_hard_negatives(proposals, proposal_scores, bt_patch, quota, t);
    int filled = static_cast<int>(hard.size());
    for (auto& e : hard) delta.push_back(std::move(e));

    for (int i = filled; i < cfg.n_neg; ++i) {
        Box nb = sample_negative(bt_patch, cfg.search_size, &st->rng, cfg.anchor_iou_neg);
        delta.push_back({st->models.pooling.pool(x34, nb), 0.0f, t, SampleOrigin::Tracked});
    }
    return delta;
}

void maybe_update(TrackerState* st) {
    if (st->frames_since_update < st->cfg.update_interval) return;
    st->frames_since_update = 0;
    int min_frame = st->frame_index - st->cfg.short_window_frames;
    std::vector<const MemoryEntry*> view =
        st->memory.training_view(min_frame, st->cfg.max_update_tracked);
    DiscriminatorTrainStats stats;
    st->models.discriminator = train_discriminator(st->models.discriminator, view, st->cfg.lambda,
                                                   st->cfg.cg_max_iters, st->cfg.cg_tol, &stats);
    st->update_log.push_back(stats);
}

Box track_frame(TrackerState* st, const ImagePatch& frame) {
    frame.validate();
    const Config& cfg = st->cfg;
    st->frame_index += 1;

    CropResult xc = crop_region(frame, st->current_box, cfg.search_context, cfg.search_size);
    FeatureMap x34 = extract_fused(xc.patch, st->models.backbone);
    std::vector<Proposal> proposals = extract_proposals(st->z34, x34, st->anchors, st->models.rpn,
                                                        cfg.n_proposals, cfg.nms_threshold);

    FrameLog log;
    if (proposals.empty()) {
        log.fallback = true;
        log.result_image = st->current_box;
        log.result_patch = xc.map.to_patch(st->current_box);
        st->logs.push_back(std::move(log));
        st->frames_since_update += 1;
        maybe_update(st);
        return st->current_box;
    }

    size_t n = proposals.size();
    ScoreSet scores;
    scores.coarse.resize(n);
    scores.ident.resize(n);
    scores.ident_pos.resize(n);
    scores.discrim.resize(n);
    scores.fused.resize(n);

    double eff_alpha = cfg.classification == Classification::Joint ? cfg.alpha
                     : cfg.classification == Classification::IdentifierOnly ? 1.0
                                                                            : 0.0;

    std::vector<Box> refined(n);
    std::vector<std::pair<PooledFeature, Box>> cls_feats;
    cls_feats.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        PooledFeature f = st->models.pooling.pool(x34, proposals[i].box);
        OffsetVector r = box_regress(f, st->f_init, st->models.regressor);
        auto [p_refined, f_aligned] = align_proposal(proposals[i], r, x34, st->models.pooling);
        refined[i] = p_refined;

        const PooledFeature& fc = cfg.refinement == Refinement::Cascaded ? f_aligned : f;
        if (cfg.refinement == Refinement::Cascaded &&
            (fc.source_box.cx != p_refined.cx || fc.source_box.cy != p_refined.cy ||
             fc.source_box.w != p_refined.w || fc.source_box.h != p_refined.h)) {
            throw std::logic_error("track_frame: classification feature not pooled at refined box");
        }

        auto [nu, nu_pos] = identify(fc, st->f_init, st->models.identifier);
        double tau = discriminate(fc, st->models.discriminator);

        scores.coarse[i] = proposals[i].coarse_score;
        scores.ident[i] = nu;
        scores.ident_pos[i] = nu_pos;
        scores.discrim[i] = tau;
        scores.fused[i] = fuse_scores(nu_pos, tau, eff_alpha);

        cls_feats.emplace_back(fc, p_refined);
    }

    int best = select_best(proposals, scores, cfg.beta);
    Box bt_patch = clamp_to_patch(refined[best], cfg.search_size);
    Box bt = xc.map.to_image(bt_patch);

    std::vector<MemoryEntry> delta = collect_samples(st, bt_patch, x34, cls_feats, scores.fused);
    for (auto& e : delta) st->memory.append(std::move(e));
    st->frames_since_update += 1;
    maybe_update(st);

    log.scores = std::move(scores);
    log.selected = best;
    log.result_patch = bt_patch;
    log.result_image = bt;
    st->logs.push_back(std::move(log));

    st->current_box = bt;
    return bt;
}

std::vector<JitterSample> build_jitter_pool(const FeatureMap& x34, const Box& gt,
                                            const PoolingSpec& pooling, const Config& cfg,
                                            Rng* rng) {
    std::vector<JitterSample> pool;
    pool.reserve(cfg.head_jitter_pool);
    int positives = cfg.head_jitter_pool / 2;
    for (int i = 0; i < cfg.head_jitter_pool; ++i) {
        Box jb;
        if (i < positives) {
            jb = jitter_box(gt, rng, cfg.jitter_center_sigma * 1.5, cfg.jitter_scale_sigma,
                            cfg.refine_iou, 1.0);
        } else {
            // near misses and background for the identifier's negative class
            jb = sample_negative(gt, static_cast<int>(x34.width * x34.stride), rng, cfg.refine_iou);
        }
        JitterSample s;
        s.feature = pooling.pool(x34, jb);
        s.target = encode_offsets(jb, gt);
        s.positive = iou(jb, gt) > cfg.refine_iou;
        pool.push_back(std::move(s));
    }
    return pool;
}

namespace {

std::vector<float> concat_sample(const PooledFeature& f, const PooledFeature& f_init) {
    std::vector<float> x;
    x.reserve(f.data.size() + f_init.data.size());
    x.insert(x.end(), f.data.begin(), f.data.end());
    x.insert(x.end(), f_init.data.begin(), f_init.data.end());
    return x;
}

}  // namespace

void fit_regressor(RegressorModel* model, const std::vector<JitterSample>& pool,
                   const PooledFeature& f_init, const Config& cfg, Rng* rng) {
    std::vector<int> positives;
    for (size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].positive) positives.push_back(static_cast<int>(i));
    }
    if (positives.empty()) return;

    SgdOptimizer opt(model->head, cfg.head_learning_rate, 0.9);
    for (int step = 0; step < cfg.head_train_steps; ++step) {
        HeadGrads grads = HeadGrads::zeros_like(model->head);
        int batch = std::min<int>(cfg.head_batch, static_cast<int>(positives.size()));
        for (int b = 0; b < batch; ++b) {
            const JitterSample& s = pool[positives[rng->uniform_int(0, static_cast<int>(positives.size()) - 1)]];
            HeadCache cache;
            std::vector<float> out =
                head_forward(model->head, concat_sample(s.feature, f_init), &cache);
            double target[4] = {s.target.rx, s.target.ry, s.target.rw, s.target.rh};
            std::vector<float> dout(4);
            for (int c = 0; c < 4; ++c) {
                double d = out[c] - target[c];
                dout[c] = static_cast<float>(std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0));
            }
            grads.accumulate(head_backward(model->head, cache, dout));
        }
        grads.scale(1.0f / batch);
        opt.step(&model->head, grads);
    }
}

void fit_identifier(IdentifierModel* model, const std::vector<JitterSample>& pool,
                    const PooledFeature& f_init, const Config& cfg, Rng* rng) {
    std::vector<int> pos, neg;
    for (size_t i = 0; i < pool.size(); ++i) {
        (pool[i].positive ? pos : neg).push_back(static_cast<int>(i));
    }
    if (pos.empty() || neg.empty()) return;

    SgdOptimizer opt(model->head, cfg.head_learning_rate, 0.9);
    for (int step = 0; step < cfg.head_train_steps; ++step) {
        HeadGrads grads = HeadGrads::zeros_like(model->head);
        int batch = cfg.head_batch;
        for (int b = 0; b < batch; ++b) {
            bool positive = b % 2 == 0;
            const std::vector<int>& src = positive ? pos : neg;
            const JitterSample& s = pool[src[rng->uniform_int(0, static_cast<int>(src.size()) - 1)]];
            HeadCache cache;
            std::vector<float> logits =
                head_forward(model->head, concat_sample(s.feature, f_init), &cache);
            double mx = std::max(logits[0], logits[1]);
            double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
            double p0 = e0 / (e0 + e1);
            // class 0 is the positive class
            std::vector<float> dout = {static_cast<float>(p0 - (positive ? 1.0 : 0.0)),
                                       static_cast<float>((1.0 - p0) - (positive ? 0.0 : 1.0))};
            grads.accumulate(head_backward(model->head, cache, dout));
        }
        grads.scale(1.0f / batch);
        opt.step(&model->head, grads);
    }
}

}  // namespace cract
