#include "cract/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace cract {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}
}  // namespace

Texture Texture::make(Rng rng) {
    Texture t;
    for (int k = 0; k < 3; ++k) {
        t.amp[k] = 0.16;
        t.fu[k] = rng.uniform(1.5, 6.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        t.fv[k] = rng.uniform(1.5, 6.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        t.phase[k] = rng.uniform(0.0, kTwoPi);
    }
    t.checker_amp = 0.15;
    t.checker_cells = rng.uniform_int(4, 8);
    return t;
}

double Texture::sample(double u, double v) const {
    double val = 0.5;
    for (int k = 0; k < 3; ++k) {
        val += amp[k] * std::sin(kTwoPi * (fu[k] * u + fv[k] * v) + phase[k]);
    }
    int cu = static_cast<int>(std::floor(u * checker_cells));
    int cv = static_cast<int>(std::floor(v * checker_cells));
    val += ((cu + cv) % 2 == 0 ? 1.0 : -1.0) * checker_amp;
    return std::clamp(val, 0.02, 0.98);
}

Box SyntheticSceneSpec::target_at(int frame) const {
    double s = std::pow(target_scale_rate, frame);
    return Box(target_box.cx + target_vx * frame, target_box.cy + target_vy * frame,
               target_box.w * s, target_box.h * s);
}

void SyntheticSceneSpec::validate() const {
    if (canvas_w < 32 || canvas_h < 32) throw std::invalid_argument("scene: canvas too small");
    if (frame_count < 2) throw std::invalid_argument("scene: needs at least 2 frames");
    target_box.require_valid("scene target");
    if (background_noise < 0.0) throw std::invalid_argument("scene: negative noise level");
    for (const DistractorSpec& d : distractors) {
        if (d.similarity < 0.0 || d.similarity > 1.0) {
            throw std::invalid_argument("scene: distractor similarity out of [0,1]");
        }
        d.initial_box.require_valid("scene distractor");
    }
    for (int t = 0; t < frame_count; ++t) {
        Box b = target_at(t);
        if (b.x0() < 1.0 || b.y0() < 1.0 || b.x1() > canvas_w - 1.0 || b.y1() > canvas_h - 1.0) {
            throw std::invalid_argument("scene: target motion escapes canvas at frame " +
                                        std::to_string(t));
        }
    }
}

SyntheticSceneSpec SyntheticSceneSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scene: cannot open " + path);
    nlohmann::json j;
    in >> j;

    SyntheticSceneSpec spec;
    if (j.contains("canvas")) {
        spec.canvas_w = j["canvas"][0];
        spec.canvas_h = j["canvas"][1];
    }
    spec.frame_count = j.value("frames", 100);
    spec.seed = j.value("seed", 1);
    spec.background_noise = j.value("background_noise", 0.05);

    const auto& t = j.at("target");
    auto b = t.at("box");  // top-left corner x,y,w,h
    spec.target_box = Box::from_corner(b[0], b[1], b[2], b[3]);
    if (t.contains("velocity")) {
        spec.target_vx = t["velocity"][0];
        spec.target_vy = t["velocity"][1];
    }
    spec.target_scale_rate = t.value("scale_rate", 1.0);
    spec.deform_jitter = t.value("deform_jitter", 0.0);

    for (const auto& dj : j.value("distractors", nlohmann::json::array())) {
        DistractorSpec d;
        d.similarity = dj.value("similarity", 0.5);
        auto db = dj.at("box");
        d.initial_box = Box::from_corner(db[0], db[1], db[2], db[3]);
        if (dj.contains("velocity")) {
            d.vx = dj["velocity"][0];
            d.vy = dj["velocity"][1];
        }
        d.scale_rate = dj.value("scale_rate", 1.0);
        spec.distractors.push_back(d);
    }
    spec.validate();
    return spec;
}

namespace {

void paint_box(ImagePatch* img, const Box& box, const Texture& target_tex, const Texture& own_tex,
               double blend_toward_target, double ju, double jv) {
    int y_begin = std::max(0, static_cast<int>(std::floor(box.y0())));
    int y_end = std::min(img->height, static_cast<int>(std::ceil(box.y1())));
    int x_begin = std::max(0, static_cast<int>(std::floor(box.x0())));
    int x_end = std::min(img->width, static_cast<int>(std::ceil(box.x1())));
    for (int y = y_begin; y < y_end; ++y) {
        double py = y + 0.5;
        if (py < box.y0() || py >= box.y1()) continue;
        for (int x = x_begin; x < x_end; ++x) {
            double px = x + 0.5;
            if (px < box.x0() || px >= box.x1()) continue;
            double u = (px - box.x0()) / box.w + ju;
            double v = (py - box.y0()) / box.h + jv;
            double val = blend_toward_target >= 1.0
                             ? target_tex.sample(u, v)
                             : blend_toward_target * target_tex.sample(u, v) +
                                   (1.0 - blend_toward_target) * own_tex.sample(u, v);
            img->at(0, y, x) = static_cast<float>(val);
        }
    }
}

}  // namespace

std::pair<std::vector<ImagePatch>, std::vector<Box>> gen_sequence(const SyntheticSceneSpec& spec) {
    spec.validate();
    Rng base(mix_seed(spec.seed, 0x5ce2e));

    Texture target_tex = Texture::make(base.fork(1));
    std::vector<Texture> distractor_tex;
    for (size_t i = 0; i < spec.distractors.size(); ++i) {
        distractor_tex.push_back(Texture::make(base.fork(100 + i)));
    }

    ImagePatch background(1, spec.canvas_h, spec.canvas_w);
    Rng bg = base.fork(2);
    for (float& v : background.data) {
        v = static_cast<float>(
            std::clamp(0.5 + spec.background_noise * bg.uniform(-1.0, 1.0), 0.0, 1.0));
    }

    Rng deform = base.fork(3);
    std::vector<ImagePatch> frames;
    std::vector<Box> gt;
    frames.reserve(spec.frame_count);
    for (int t = 0; t < spec.frame_count; ++t) {
        ImagePatch img = background;
        for (size_t i = 0; i < spec.distractors.size(); ++i) {
            const DistractorSpec& d = spec.distractors[i];
            double s = std::pow(d.scale_rate, t);
            Box db(d.initial_box.cx + d.vx * t, d.initial_box.cy + d.vy * t, d.initial_box.w * s,
                   d.initial_box.h * s);
            paint_box(&img, db, target_tex, distractor_tex[i], d.similarity, 0.0, 0.0);
        }
        double ju = 0.0, jv = 0.0;
        if (spec.deform_jitter > 0.0) {
            ju = deform.normal() * spec.deform_jitter / spec.target_box.w;
            jv = deform.normal() * spec.deform_jitter / spec.target_box.h;
        }
        Box tb = spec.target_at(t);
        paint_box(&img, tb, target_tex, target_tex, 1.0, ju, jv);
        frames.push_back(std::move(img));
        gt.push_back(tb);
    }
    return {std::move(frames), std::move(gt)};
}

EvalResult eval_ope(const std::vector<Box>& pred, const std::vector<Box>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("eval_ope: length mismatch");
    if (pred.size() < 2) throw std::invalid_argument("eval_ope: need at least 2 frames");

    EvalResult r;
    int hits = 0;
    for (size_t t = 1; t < pred.size(); ++t) {
        double v = iou(pred[t], gt[t]);
        double dx = pred[t].cx - gt[t].cx;
        double dy = pred[t].cy - gt[t].cy;
        double err = std::sqrt(dx * dx + dy * dy);
        r.per_frame_iou.push_back(v);
        r.per_frame_center_error.push_back(err);
        if (err <= 20.0) ++hits;
    }
    r.precision = static_cast<double>(hits) / r.per_frame_center_error.size();

    double auc = 0.0;
    for (int b = 0; b <= 20; ++b) {
        double thr = b * 0.05;
        int pass = 0;
        for (double v : r.per_frame_iou) {
            if (v > thr) ++pass;
        }
        auc += static_cast<double>(pass) / r.per_frame_iou.size();
    }
    r.success_auc = auc / 21.0;
    return r;
}

SuiteTier tier_from_name(const std::string& name) {
    if (name == "none" || name == "no_distractor") return SuiteTier::NoDistractor;
    if (name == "mid" || name == "0.5") return SuiteTier::MidSimilarity;
    if (name == "high" || name == "0.9") return SuiteTier::HighSimilarity;
    throw std::invalid_argument("unknown suite tier '" + name + "'");
}

std::vector<SyntheticSceneSpec> standard_suite(SuiteTier tier) {
    std::vector<SyntheticSceneSpec> specs;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(mix_seed(seed, 0x57d5));
        SyntheticSceneSpec s;
        s.canvas_w = 480;
        s.canvas_h = 320;
        s.frame_count = 100;
        s.seed = seed;
        s.background_noise = 0.06;

        double cx = rng.uniform(140.0, 340.0);
        double cy = rng.uniform(100.0, 220.0);
        s.target_box = Box(cx, cy, 64.0, 64.0);
        double vx = rng.uniform(0.5, 1.4) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        double vy = rng.uniform(0.3, 0.9) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        int last = s.frame_count - 1;
        if (cx + vx * last < 34.0 || cx + vx * last > s.canvas_w - 34.0) vx = -vx;
        if (cy + vy * last < 34.0 || cy + vy * last > s.canvas_h - 34.0) vy = -vy;
        s.target_vx = vx;
        s.target_vy = vy;

        if (tier != SuiteTier::NoDistractor) {
            DistractorSpec d;
            d.similarity = tier == SuiteTier::MidSimilarity ? 0.5 : 0.9;
            double side = cx < s.canvas_w / 2.0 ? 1.0 : -1.0;
            d.initial_box = Box(cx + side * rng.uniform(120.0, 150.0),
                                std::clamp(cy + rng.uniform(-50.0, 50.0), 40.0, s.canvas_h - 40.0),
                                64.0, 64.0);
            // aim the distractor to pass near the target mid-sequence
            int meet = 50;
            Box target_meet = s.target_at(meet);
            double off_y = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(34.0, 44.0);
            d.vx = (target_meet.cx - d.initial_box.cx) / meet;
            d.vy = (target_meet.cy + off_y - d.initial_box.cy) / meet;
            s.distractors.push_back(d);
        }
        s.validate();
        specs.push_back(std::move(s));
    }
    return specs;
}

SequenceRun track_sequence(const std::vector<ImagePatch>& frames, const std::vector<Box>& gt,
                           const Config& cfg, TrackerState* out_state) {
    if (frames.size() != gt.size() || frames.size() < 2) {
        throw std::invalid_argument("track_sequence: frames/gt mismatch or too short");
    }
    SequenceRun run;
    double t0 = now_seconds();
    TrackerState state = init(frames[0], gt[0], cfg, HeadModels::make(cfg));
    run.init_seconds = now_seconds() - t0;

    run.pred.push_back(gt[0]);
    t0 = now_seconds();
    for (size_t t = 1; t < frames.size(); ++t) {
        run.pred.push_back(track_frame(&state, frames[t]));
    }
    run.track_seconds = now_seconds() - t0;

    run.eval = eval_ope(run.pred, gt);
    run.eval.fps = run.track_seconds > 0.0 ? (frames.size() - 1) / run.track_seconds : 0.0;
    if (out_state) *out_state = std::move(state);
    return run;
}

Config apply_arm(const Config& base, const std::string& arm) {
    Config cfg = base;
    if (arm == "cascaded") cfg.refinement = Refinement::Cascaded;
    else if (arm == "parallel") cfg.refinement = Refinement::Parallel;
    else if (arm == "joint") cfg.classification = Classification::Joint;
    else if (arm == "identifier_only") cfg.classification = Classification::IdentifierOnly;
    else if (arm == "discriminator_only") cfg.classification = Classification::DiscriminatorOnly;
    else if (arm == "proialign") cfg.pooling = Pooling::Pyramid;
    else if (arm == "roialign") cfg.pooling = Pooling::Plain;
    else throw std::invalid_argument("unknown ablation arm '" + arm + "'");
    return cfg;
}

std::vector<ArmResult> run_ablation(const std::vector<SyntheticSceneSpec>& specs,
                                    const Config& base, const std::vector<std::string>& arms,
                                    int jobs) {
    struct Task {
        size_t arm_index;
        size_t spec_index;
    };
    std::vector<Task> tasks;
    for (size_t a = 0; a < arms.size(); ++a) {
        for (size_t s = 0; s < specs.size(); ++s) tasks.push_back({a, s});
    }

    std::vector<ArmResult> results(arms.size());
    for (size_t a = 0; a < arms.size(); ++a) {
        results[a].arm = arms[a];
        results[a].per_seq_auc.resize(specs.size(), 0.0);
        results[a].per_seq_precision.resize(specs.size(), 0.0);
        results[a].per_seq_fps.resize(specs.size(), 0.0);
    }

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& task = tasks[i];
            Config cfg = apply_arm(base, arms[task.arm_index]);
            auto [frames, gt] = gen_sequence(specs[task.spec_index]);
            SequenceRun run = track_sequence(frames, gt, cfg);
            results[task.arm_index].per_seq_auc[task.spec_index] = run.eval.success_auc;
            results[task.arm_index].per_seq_precision[task.spec_index] = run.eval.precision;
            results[task.arm_index].per_seq_fps[task.spec_index] = run.eval.fps;
        }
    };

    int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }

    for (ArmResult& r : results) {
        double sa = 0.0, sp = 0.0, sf = 0.0;
        for (size_t i = 0; i < r.per_seq_auc.size(); ++i) {
            sa += r.per_seq_auc[i];
            sp += r.per_seq_precision[i];
            sf += r.per_seq_fps[i];
        }
        size_t n = std::max<size_t>(1, r.per_seq_auc.size());
        r.mean_auc = sa / n;
        r.mean_precision = sp / n;
        r.mean_fps = sf / n;
    }
    return results;
}

ImagePatch render_overlay(const ImagePatch& frame,
                          const std::vector<std::pair<Box, std::array<float, 3>>>& boxes) {
    frame.validate();
    if (boxes.empty()) return frame;

    ImagePatch out(3, frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(c, y, x) = frame.channels == 1 ? frame.at(0, y, x) : frame.at(c, y, x);
            }
        }
    }

    for (const auto& [box, color] : boxes) {
        int x0 = static_cast<int>(std::floor(box.x0()));
        int y0 = static_cast<int>(std::floor(box.y0()));
        int x1 = static_cast<int>(std::floor(box.x1()));
        int y1 = static_cast<int>(std::floor(box.y1()));
        auto put = [&](int x, int y) {
            if (x < 0 || x >= out.width || y < 0 || y >= out.height) return;
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = color[c];
        };
        for (int x = x0; x <= x1; ++x) {
            put(x, y0);
            put(x, y1);
        }
        for (int y = y0; y <= y1; ++y) {
            put(x0, y);
            put(x1, y);
        }
    }
    return out;
}

std::vector<Box> read_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("annotations: cannot open " + path);
    std::vector<Box> boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        for (char& ch : line) {
            if (ch == '\t') ch = ',';
        }
        double v[4];
        int consumed = 0;
        int got = std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf%n", &v[0], &v[1], &v[2], &v[3],
                              &consumed);
        if (got != 4) {
            throw std::runtime_error("annotations: line " + std::to_string(line_no) +
                                     ": expected 4 comma-separated values");
        }
        boxes.push_back(Box::from_corner(v[0], v[1], v[2], v[3]));
    }
    return boxes;
}

void write_annotations(const std::string& path, const std::vector<Box>& boxes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("annotations: cannot open " + path + " for writing");
    char buf[160];
    for (const Box& b : boxes) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f\n", b.x0(), b.y0(), b.w, b.h);
        out << buf;
    }
}

}  // namespace cract
