#pragma once

#include <string>
#include <vector>

#include "cract/backbone.hpp"
#include "cract/crac.hpp"

namespace cract {

enum class Refinement { Cascaded, Parallel };
enum class Classification { Joint, IdentifierOnly, DiscriminatorOnly };
enum class Pooling { Pyramid, Plain };

struct Config {
    int n_proposals = 10;
    double alpha = 0.4;
    double beta = 0.8;
    int update_interval = 10;  // K

    int n_pos = 50;
    int n_neg = 200;
    int init_pos = 200;
    int init_neg = 1000;

    std::vector<double> anchor_ratios = {0.33, 0.5, 1.0, 2.0, 3.0};
    double anchor_scale = 64.0;  // stand-in; the paper's anchor scales are unavailable
    double anchor_iou_pos = 0.6;
    double anchor_iou_neg = 0.3;
    double refine_iou = 0.5;

    std::vector<int> pyramid_levels = {6, 3, 1};
    double lambda = 0.1;
    double cg_tol = 1e-6;
    int cg_max_iters = 60;
    double nms_threshold = 0.6;

    int template_size = 128;
    int search_size = 256;
    double template_context = 2.0;
    double search_context = 4.0;

    uint64_t seed = 1;

    Refinement refinement = Refinement::Cascaded;
    Classification classification = Classification::Joint;
    Pooling pooling = Pooling::Pyramid;
    IdentifierMode identifier_mode = IdentifierMode::SoftmaxPositive;

    // first-frame fitting of the regression / identification heads
    bool fit_heads = true;
    int head_train_steps = 150;
    double head_learning_rate = 2e-3;
    int head_jitter_pool = 320;
    int head_batch = 16;

    // sample memory and update schedule
    int memory_cycles = 60;        // tracked capacity = memory_cycles * (n_pos + n_neg)
    int short_window_frames = 50;  // 5 update cycles
    int max_update_tracked = 800;  // training-view subsample cap
    int hard_negative_quota = 10;

    double jitter_center_sigma = 0.1;
    double jitter_scale_sigma = 0.2;

    void validate() const;
    static Config from_file(const std::string& path);
};

struct HeadModels {
    BackboneParams backbone;
    PoolingSpec pooling;
    RegressorModel regressor;
    IdentifierModel identifier;
    DiscriminatorModel discriminator;
    RpnHeads rpn;

    static HeadModels make(const Config& cfg);
};

struct FrameLog {
    ScoreSet scores;
    int selected = -1;
    bool fallback = false;
    Box result_patch;  // selected refined box in search-patch coordinates
    Box result_image;
};

struct TrackerState {
    Config cfg;
    HeadModels models;

    FeatureMap z34;       // template fused features
    PooledFeature f_init;  // fixed first-frame target feature, never mutated

    Box current_box;  // image coordinates
    int frame_index = 1;
    int frames_since_update = 0;

    SampleMemory memory;
    Rng rng{1};

    std::vector<Box> anchors;  // search-patch coordinates, fixed layout
    int response_h = 0;
    int response_w = 0;

    std::vector<FrameLog> logs;
    std::vector<DiscriminatorTrainStats> update_log;
};

TrackerState init(const ImagePatch& frame, const Box& b1, const Config& cfg, HeadModels models);

Box track_frame(TrackerState* state, const ImagePatch& frame);

// argmax over beta * fused + (1 - beta) * coarse, ties to the lower index
int select_best(const std::vector<Proposal>& proposals, const ScoreSet& scores, double beta);

// n_pos positive and n_neg negative samples around bt (search-patch coords),
// hard negatives from the current proposals filling the first part of the
// negative quota. Returns the delta; the caller appends it to memory.
std::vector<MemoryEntry> collect_samples(TrackerState* state, const Box& bt_patch,
                                         const FeatureMap& x34,
                                         const std::vector<std::pair<PooledFeature, Box>>& proposals,
                                         const std::vector<double>& proposal_scores);

// retrains the discriminator every K-th tracked frame on the short window
// merged with the pinned initial samples
void maybe_update(TrackerState* state);

// Seeded jitter of a box: Gaussian center perturbation (sigma_center * size)
// and log-scale perturbation (sigma_scale), rejection-sampled into an IoU band
// relative to the reference box.
Box jitter_box(const Box& reference, Rng* rng, double sigma_center, double sigma_scale,
               double iou_min, double iou_max, int max_tries = 100);

// Desk-scale first-frame fitting helpers (smooth-L1 / cross-entropy SGD).
struct JitterSample {
    PooledFeature feature;
    OffsetVector target;  // encode_offsets(jittered box, gt)
    bool positive = false;
};

std::vector<JitterSample> build_jitter_pool(const FeatureMap& x34, const Box& gt,
                                            const PoolingSpec& pooling, const Config& cfg,
                                            Rng* rng);
void fit_regressor(RegressorModel* model, const std::vector<JitterSample>& pool,
                   const PooledFeature& f_init, const Config& cfg, Rng* rng);
void fit_identifier(IdentifierModel* model, const std::vector<JitterSample>& pool,
                    const PooledFeature& f_init, const Config& cfg, Rng* rng);

}  // namespace cract
