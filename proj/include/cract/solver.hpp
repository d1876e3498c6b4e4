#pragma once

#include <functional>
#include <vector>

namespace cract {

struct CgResult {
    std::vector<double> x;
    int iterations = 0;
    double relative_residual = 0.0;
};

// Conjugate gradient for symmetric positive definite systems M x = b.
// Warm-started from x0; iterates strictly decrease the quadratic
// 0.5 x'Mx - b'x, so callers embedding this in a larger objective are
// guaranteed monotone progress. Stops at ||r|| / ||b|| <= tol or max_iters.
CgResult cg_solve(const std::function<std::vector<double>(const std::vector<double>&)>& matvec,
                  const std::vector<double>& b, const std::vector<double>& x0, double tol,
                  int max_iters);

// Ridge normal equations (A'A + diag(reg)) x = A'y for row-major A (rows x dim).
// reg holds the per-coordinate regularization (uniform lambda for plain ridge;
// zero entries leave coordinates such as intercepts unpenalized).
CgResult ridge_normal_cg(const std::vector<double>& a, int rows, int dim,
                         const std::vector<double>& y, const std::vector<double>& reg,
                         const std::vector<double>& x0, double tol, int max_iters);

}  // namespace cract
