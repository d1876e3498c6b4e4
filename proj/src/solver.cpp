#include "cract/solver.hpp"

#include <cmath>
#include <stdexcept>

namespace cract {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

CgResult cg_solve(const std::function<std::vector<double>(const std::vector<double>&)>& matvec,
                  const std::vector<double>& b, const std::vector<double>& x0, double tol,
                  int max_iters) {
    if (b.size() != x0.size()) throw std::invalid_argument("cg_solve: b and x0 size mismatch");
    size_t n = b.size();

    std::vector<double> x = x0;
    std::vector<double> r(n), p(n);
    std::vector<double> mx = matvec(x);
    for (size_t i = 0; i < n; ++i) r[i] = b[i] - mx[i];
    p = r;

    double bnorm = std::sqrt(dot(b, b));
    if (bnorm == 0.0) bnorm = 1.0;
    double rr = dot(r, r);

    CgResult res;
    res.relative_residual = std::sqrt(rr) / bnorm;
    for (int it = 0; it < max_iters && res.relative_residual > tol; ++it) {
        std::vector<double> mp = matvec(p);
        double pmp = dot(p, mp);
        if (pmp <= 0.0) break;  // numerically lost positive definiteness
        double alpha = rr / pmp;
        for (size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        double rr_next = dot(r, r);
        double beta = rr_next / rr;
        rr = rr_next;
        for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        res.iterations = it + 1;
        res.relative_residual = std::sqrt(rr) / bnorm;
    }
    res.x = std::move(x);
    return res;
}

CgResult ridge_normal_cg(const std::vector<double>& a, int rows, int dim,
                         const std::vector<double>& y, const std::vector<double>& reg,
                         const std::vector<double>& x0, double tol, int max_iters) {
    if (a.size() != static_cast<size_t>(rows) * dim) {
        throw std::invalid_argument("ridge_normal_cg: A size mismatch");
    }
    if (y.size() != static_cast<size_t>(rows) || reg.size() != static_cast<size_t>(dim)) {
        throw std::invalid_argument("ridge_normal_cg: y/reg size mismatch");
    }

    // Precompute G = A'A and rhs = A'y; matvecs are then O(dim^2).
    std::vector<double> g(static_cast<size_t>(dim) * dim, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* row = a.data() + static_cast<size_t>(r) * dim;
        for (int i = 0; i < dim; ++i) {
            double ri = row[i];
            if (ri == 0.0) continue;
            double* gi = g.data() + static_cast<size_t>(i) * dim;
            for (int j = i; j < dim; ++j) gi[j] += ri * row[j];
        }
    }
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < i; ++j) g[static_cast<size_t>(i) * dim + j] = g[static_cast<size_t>(j) * dim + i];
    }
    std::vector<double> rhs(dim, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* row = a.data() + static_cast<size_t>(r) * dim;
        for (int i = 0; i < dim; ++i) rhs[i] += row[i] * y[r];
    }

    auto matvec = [&](const std::vector<double>& v) {
        std::vector<double> out(dim, 0.0);
        for (int i = 0; i < dim; ++i) {
            const double* gi = g.data() + static_cast<size_t>(i) * dim;
            double s = reg[i] * v[i];
            for (int j = 0; j < dim; ++j) s += gi[j] * v[j];
            out[i] = s;
        }
        return out;
    };
    return cg_solve(matvec, rhs, x0, tol, max_iters);
}

}  // namespace cract
