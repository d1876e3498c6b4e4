#pragma once

#include <array>
#include <deque>
#include <utility>
#include <vector>

#include "cract/grad.hpp"
#include "cract/proposal.hpp"
#include "cract/roipool.hpp"
#include "cract/solver.hpp"

namespace cract {

// Pooling used throughout the cascade; the plain arm mirrors the pyramid arm
// with a single 6x6 RoIAlign.
struct PoolingSpec {
    bool pyramid = true;
    PyramidParams params;
    int plain_size = 6;
    int samples_per_bin = 2;

    static PoolingSpec make(int channels, bool pyramid);
    PooledFeature pool(const FeatureMap& fmap, const Box& box) const;
};

// Box regression head R: concat(f, f_init) -> 1x1 conv -> three fc -> offsets.
struct RegressorModel {
    HeadStack head;

    static RegressorModel make_default(int feature_channels, uint64_t seed);
};

enum class IdentifierMode { SoftmaxPositive, CosineFallback };

// Identifier I: relation head against the fixed first-frame template feature.
struct IdentifierModel {
    HeadStack head;
    IdentifierMode mode = IdentifierMode::SoftmaxPositive;

    static IdentifierModel make_default(int feature_channels, uint64_t seed);
};

// Online discriminator D: frozen 1x1 conv, two fc layers updated during
// tracking (the aggregate fc parameter vector is the ridge weight w).
struct DiscriminatorModel {
    HeadStack stack;  // conv + fc1(relu) + fc2(linear, dim 1)
    double lambda = 0.1;

    static DiscriminatorModel make_default(int feature_channels, uint64_t seed);
};

enum class SampleOrigin { Initial, Tracked, HardNegative };

struct MemoryEntry {
    PooledFeature feature;
    float label = 0.0f;  // strictly binary
    int frame_index = 0;
    SampleOrigin origin = SampleOrigin::Tracked;
};

// Discrete training set with pinned initial-frame samples; tracked-origin
// entries are evicted oldest-first once the capacity is reached.
class SampleMemory {
public:
    SampleMemory() = default;
    explicit SampleMemory(size_t capacity) : capacity_(capacity) {}

    void append(MemoryEntry entry);
    size_t size() const { return initial_.size() + tracked_.size(); }
    size_t capacity() const { return capacity_; }
    size_t initial_count() const { return initial_.size(); }

    std::vector<const MemoryEntry*> view_all() const;
    // All initial samples plus tracked samples with frame_index >= min_frame,
    // the latter evenly subsampled down to max_tracked.
    std::vector<const MemoryEntry*> training_view(int min_frame, size_t max_tracked) const;

private:
    std::vector<MemoryEntry> initial_;
    std::deque<MemoryEntry> tracked_;
    size_t capacity_ = 0;
};

struct ScoreSet {
    std::vector<double> coarse;                     // c_i
    std::vector<std::array<double, 2>> ident;       // nu_i
    std::vector<double> ident_pos;                  // nu_i+
    std::vector<double> discrim;                    // tau_i
    std::vector<double> fused;                      // s_i
};

OffsetVector box_regress(const PooledFeature& f, const PooledFeature& f_init,
                         const RegressorModel& model);

std::pair<Box, PooledFeature> align_proposal(const Proposal& p, const OffsetVector& r,
                                             const FeatureMap& x34, const PoolingSpec& pooling);

std::pair<std::array<double, 2>, double> identify(const PooledFeature& f,
                                                  const PooledFeature& f_init,
                                                  const IdentifierModel& model);

double discriminate(const PooledFeature& f, const DiscriminatorModel& model);

// w is the model's fc parameters in flat order [fc1.W, fc1.b, fc2.W, fc2.b].
std::vector<double> discriminator_w(const DiscriminatorModel& model);
void set_discriminator_w(DiscriminatorModel* model, const std::vector<double>& w);

// Sum of squared errors over the samples plus lambda * ||weights||^2 (fc
// weight matrices only; biases are unpenalized so heavy regularization shrinks
// predictions toward the label mean rather than zero).
double ridge_objective(const std::vector<const MemoryEntry*>& samples,
                       const DiscriminatorModel& model, double lambda);
std::vector<double> ridge_gradient(const std::vector<const MemoryEntry*>& samples,
                                   const DiscriminatorModel& model, double lambda);

struct DiscriminatorTrainStats {
    double objective_before = 0.0;
    double objective_after = 0.0;
    int cg_iterations = 0;
};

// Alternating update: exact conjugate-gradient ridge solve of the final fc
// layer (treated as linear given fixed earlier activations), two backtracking
// gradient refinement rounds of the first fc layer, then a final solve. The
// objective never increases.
DiscriminatorModel train_discriminator(const DiscriminatorModel& model,
                                       const std::vector<const MemoryEntry*>& samples,
                                       double lambda, int max_iters, double tol,
                                       DiscriminatorTrainStats* stats = nullptr);

std::vector<MemoryEntry> mine_hard_negatives(
    const std::vector<std::pair<PooledFeature, Box>>& candidates, const std::vector<double>& scores,
    const Box& gt, int quota, int frame_index);

double fuse_scores(double ident_pos, double discrim, double alpha);

double ide_loss(const std::array<double, 2>& logits, int label);
double reg_loss(const OffsetVector& pred, const OffsetVector& target);

}  // namespace cract
