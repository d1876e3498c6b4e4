#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "cract/tracker.hpp"

namespace cract {

// Deterministic procedural texture: a few seeded sinusoids plus a checker
// component, sampled in normalized [0,1]^2 coordinates.
struct Texture {
    std::array<double, 3> amp{};
    std::array<double, 3> fu{};
    std::array<double, 3> fv{};
    std::array<double, 3> phase{};
    double checker_amp = 0.0;
    double checker_cells = 6.0;

    static Texture make(Rng rng);
    double sample(double u, double v) const;
};

struct DistractorSpec {
    double similarity = 0.5;  // convex blend toward the target texture
    Box initial_box;
    double vx = 0.0;
    double vy = 0.0;
    double scale_rate = 1.0;
};

struct SyntheticSceneSpec {
    int canvas_w = 480;
    int canvas_h = 320;
    Box target_box;  // first-frame box
    double target_vx = 0.0;
    double target_vy = 0.0;
    double target_scale_rate = 1.0;
    double deform_jitter = 0.0;  // per-frame texture-coordinate jitter, px
    std::vector<DistractorSpec> distractors;
    double background_noise = 0.05;
    int frame_count = 100;
    uint64_t seed = 1;

    Box target_at(int frame) const;
    void validate() const;  // rejects motion that escapes the canvas

    static SyntheticSceneSpec from_json_file(const std::string& path);
};

std::pair<std::vector<ImagePatch>, std::vector<Box>> gen_sequence(const SyntheticSceneSpec& spec);

struct EvalResult {
    std::vector<double> per_frame_iou;           // frames 2..T
    std::vector<double> per_frame_center_error;  // pixels
    double precision = 0.0;                      // center error <= 20 px
    double success_auc = 0.0;                    // mean of 21-bin curve, IoU > thr
    double fps = 0.0;
};

EvalResult eval_ope(const std::vector<Box>& pred, const std::vector<Box>& gt);

enum class SuiteTier { NoDistractor, MidSimilarity, HighSimilarity };

// 20 sequences x 100 frames, 64 px targets, seeds 1..20.
std::vector<SyntheticSceneSpec> standard_suite(SuiteTier tier);
SuiteTier tier_from_name(const std::string& name);

struct SequenceRun {
    std::vector<Box> pred;  // includes the first (given) frame box
    EvalResult eval;
    double init_seconds = 0.0;
    double track_seconds = 0.0;
};

SequenceRun track_sequence(const std::vector<ImagePatch>& frames, const std::vector<Box>& gt,
                           const Config& cfg, TrackerState* out_state = nullptr);

struct ArmResult {
    std::string arm;
    std::vector<double> per_seq_auc;
    std::vector<double> per_seq_precision;
    std::vector<double> per_seq_fps;
    double mean_auc = 0.0;
    double mean_precision = 0.0;
    double mean_fps = 0.0;
};

// Applies one named ablation arm on top of a base config.
Config apply_arm(const Config& base, const std::string& arm);

// Runs every arm over identical seeded sequences; jobs > 1 parallelizes over
// (sequence, arm) pairs.
std::vector<ArmResult> run_ablation(const std::vector<SyntheticSceneSpec>& specs,
                                    const Config& base, const std::vector<std::string>& arms,
                                    int jobs = 1);

// 1-px rectangle outlines burned into a copy; with an empty box list the input
// is returned unchanged, otherwise the output is RGB.
ImagePatch render_overlay(const ImagePatch& frame,
                          const std::vector<std::pair<Box, std::array<float, 3>>>& boxes);

// OTB-style annotations: one "x,y,w,h" top-left-corner line per frame.
std::vector<Box> read_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<Box>& boxes);

}  // namespace cract
