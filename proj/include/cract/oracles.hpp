#pragma once

#include <vector>

#include "cract/geometry.hpp"
#include "cract/roipool.hpp"
#include "cract/tensor.hpp"

// Independent scalar reference implementations used to cross-check the fast
// paths. Everything here is written against the documented conventions, not
// against the production code, and stays deliberately naive.
namespace cract::oracle {

FeatureMap conv2d_naive(const FeatureMap& input, const DenseLayerParams& params);
std::vector<float> fully_connected_naive(const std::vector<float>& input,
                                         const DenseLayerParams& params);
FeatureMap resize_bilinear_naive(const FeatureMap& input, int out_h, int out_w);
FeatureMap xcorr_naive(const FeatureMap& tmpl, const FeatureMap& search);
PooledFeature roialign_naive(const FeatureMap& fmap, const Box& box, int out_size,
                             int samples_per_bin);
double box_mean_dense(const FeatureMap& fmap, const Box& box, int channel, int grid);
std::vector<int> nms_naive(const std::vector<Box>& boxes, const std::vector<double>& scores,
                           double iou_thr, int keep);

// Dense SPD solve via Cholesky; m is row-major dim x dim.
std::vector<double> cholesky_solve(std::vector<double> m, std::vector<double> b, int dim);
// Closed-form ridge solution (A'A + diag(reg)) x = A'y through the dense solver.
std::vector<double> ridge_closed_form(const std::vector<double>& a, int rows, int dim,
                                      const std::vector<double>& y, const std::vector<double>& reg);

// Runs the full randomized oracle gauntlet (kernels, geometry, solver) and
// prints one line per check. Returns the number of failed checks.
int run_all(uint64_t seed, bool verbose);

}  // namespace cract::oracle
