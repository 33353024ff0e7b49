#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace bsde::linalg {

// Pairwise (tree) summation with a fixed split rule. The reduction order is a
// function of the element count alone, so results do not depend on thread
// count or scheduling.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

inline MeanStderr mean_stderr(std::span<const double> v) {
    MeanStderr r;
    r.n = v.size();
    if (v.empty()) return r;
    r.mean = pairwise_sum(v) / static_cast<double>(v.size());
    if (v.size() < 2) return r;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - r.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
    r.stderr_ = std::sqrt(var / static_cast<double>(v.size()));
    return r;
}

// Cholesky solve of the SPD system A x = b (A row-major n x n, overwritten).
// Returns false when a pivot drops below tol * max diagonal, i.e. the system
// is numerically rank deficient.
inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n,
                           double tol = 1e-12) {
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a[i * n + i]);
    if (max_diag <= 0.0) return false;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= tol * max_diag) return false;
        const double ljj = std::sqrt(d);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    return true;
}

// Thomas algorithm for a tridiagonal system; diag/rhs are overwritten.
inline void tridiag_solve(std::vector<double>& lower, std::vector<double>& diag,
                          std::vector<double>& upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t ii = n - 1; ii-- > 0;) {
        rhs[ii] = (rhs[ii] - upper[ii] * rhs[ii + 1]) / diag[ii];
    }
}

}  // namespace bsde::linalg
