#pragma once

// Independent reference implementations used by the test suites. Everything
// here is deliberately written the slow, obvious way and shares no code with
// the library paths it checks.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tdflow/tensor.hpp"

namespace oracle {

using tdflow::index_t;
using tdflow::tensor;

// Cyclic Jacobi eigensolver for a symmetric matrix; returns eigenvalues
// descending with matching eigenvector columns.
struct eig_result {
    std::vector<double> values;
    tensor vectors;  // n x n, column j is the eigenvector of values[j]
};

inline eig_result symmetric_eig(tensor a) {
    const index_t n = a.extent(0);
    tensor v({n, n});
    for (index_t i = 0; i < n; ++i) v.at({i, i}) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (index_t p = 0; p < n; ++p)
            for (index_t q = p + 1; q < n; ++q) off += a.at({p, q}) * a.at({p, q});
        if (off < 1e-28) break;
        for (index_t p = 0; p < n - 1; ++p) {
            for (index_t q = p + 1; q < n; ++q) {
                const double apq = a.at({p, q});
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at({q, q}) - a.at({p, p})) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (index_t i = 0; i < n; ++i) {
                    const double aip = a.at({i, p}), aiq = a.at({i, q});
                    a.at({i, p}) = c * aip - s * aiq;
                    a.at({i, q}) = s * aip + c * aiq;
                }
                for (index_t i = 0; i < n; ++i) {
                    const double api = a.at({p, i}), aqi = a.at({q, i});
                    a.at({p, i}) = c * api - s * aqi;
                    a.at({q, i}) = s * api + c * aqi;
                }
                for (index_t i = 0; i < n; ++i) {
                    const double vip = v.at({i, p}), viq = v.at({i, q});
                    v.at({i, p}) = c * vip - s * viq;
                    v.at({i, q}) = s * vip + c * viq;
                }
            }
        }
    }
    std::vector<index_t> ord(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), index_t{0});
    std::sort(ord.begin(), ord.end(), [&](index_t x, index_t y) { return a.at({x, x}) > a.at({y, y}); });
    eig_result out;
    out.values.resize(static_cast<std::size_t>(n));
    out.vectors = tensor({n, n});
    for (index_t j = 0; j < n; ++j) {
        out.values[static_cast<std::size_t>(j)] = a.at({ord[static_cast<std::size_t>(j)], ord[static_cast<std::size_t>(j)]});
        for (index_t i = 0; i < n; ++i) out.vectors.at({i, j}) = v.at({i, ord[static_cast<std::size_t>(j)]});
    }
    return out;
}

// Best rank-r Frobenius approximation of a via the eigendecomposition of
// a^T a (Gram route, independent of the one-sided Jacobi SVD).
inline tensor gram_low_rank(const tensor& a, index_t r) {
    const index_t m = a.extent(0), n = a.extent(1);
    tensor gram({n, n});
    for (index_t i = 0; i < n; ++i)
        for (index_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (index_t k = 0; k < m; ++k) s += a.at({k, i}) * a.at({k, j});
            gram.at({i, j}) = s;
        }
    const eig_result eig = symmetric_eig(gram);
    // projection onto the span of the top-r right singular vectors
    tensor approx({m, n});
    for (index_t j = 0; j < r; ++j) {
        // av = a * v_j ; approx += av * v_j^T
        std::vector<double> av(static_cast<std::size_t>(m), 0.0);
        for (index_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (index_t k = 0; k < n; ++k) s += a.at({i, k}) * eig.vectors.at({k, j});
            av[static_cast<std::size_t>(i)] = s;
        }
        for (index_t i = 0; i < m; ++i)
            for (index_t k = 0; k < n; ++k) approx.at({i, k}) += av[static_cast<std::size_t>(i)] * eig.vectors.at({k, j});
    }
    return approx;
}

// Normal-equations least squares (a^T a)^{-1} a^T b for full-rank a.
inline tensor normal_equations_solve(const tensor& a, const tensor& b) {
    const index_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
    tensor ata({n, n}), atb({n, p});
    for (index_t i = 0; i < n; ++i) {
        for (index_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (index_t k = 0; k < m; ++k) s += a.at({k, i}) * a.at({k, j});
            ata.at({i, j}) = s;
        }
        for (index_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (index_t k = 0; k < m; ++k) s += a.at({k, i}) * b.at({k, j});
            atb.at({i, j}) = s;
        }
    }
    // plain Gauss-Jordan
    const index_t nn = n;
    for (index_t col = 0; col < nn; ++col) {
        index_t piv = col;
        for (index_t i = col + 1; i < nn; ++i)
            if (std::abs(ata.at({i, col})) > std::abs(ata.at({piv, col}))) piv = i;
        for (index_t j = 0; j < nn; ++j) std::swap(ata.at({col, j}), ata.at({piv, j}));
        for (index_t j = 0; j < p; ++j) std::swap(atb.at({col, j}), atb.at({piv, j}));
        const double d = ata.at({col, col});
        for (index_t i = 0; i < nn; ++i) {
            if (i == col) continue;
            const double f = ata.at({i, col}) / d;
            for (index_t j = 0; j < nn; ++j) ata.at({i, j}) -= f * ata.at({col, j});
            for (index_t j = 0; j < p; ++j) atb.at({i, j}) -= f * atb.at({col, j});
        }
    }
    tensor x({n, p});
    for (index_t i = 0; i < n; ++i)
        for (index_t j = 0; j < p; ++j) x.at({i, j}) = atb.at({i, j}) / ata.at({i, i});
    return x;
}

// Direct convolution as an explicit 7-deep loop nest. Input b,m,n,c
// channel-last; weight (c_out, c_in, kh, kw); zero padding.
inline tensor naive_conv(const tensor& x, const tensor& w, index_t stride, index_t padding) {
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2), ci = x.extent(3);
    const index_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const index_t mo = (m + 2 * padding - kh) / stride + 1;
    const index_t no = (n + 2 * padding - kw) / stride + 1;
    tensor y({b, mo, no, co});
    for (index_t ib = 0; ib < b; ++ib)
        for (index_t om = 0; om < mo; ++om)
            for (index_t on = 0; on < no; ++on)
                for (index_t oc = 0; oc < co; ++oc) {
                    double acc = 0.0;
                    for (index_t c = 0; c < ci; ++c)
                        for (index_t dy = 0; dy < kh; ++dy)
                            for (index_t dx = 0; dx < kw; ++dx) {
                                const index_t iy = om * stride + dy - padding;
                                const index_t ix = on * stride + dx - padding;
                                if (iy < 0 || iy >= m || ix < 0 || ix >= n) continue;
                                acc += x.at({ib, iy, ix, c}) * w.at({oc, c, dy, dx});
                            }
                    y.at({ib, om, on, oc}) = acc;
                }
    return y;
}

// Build a rank-r 4-way CP tensor from explicit factor columns.
inline tensor cp_compose(const std::vector<tensor>& factors) {
    const index_t r = factors[0].extent(1);
    tensor out({factors[0].extent(0), factors[1].extent(0), factors[2].extent(0), factors[3].extent(0)});
    for (index_t rho = 0; rho < r; ++rho)
        for (index_t i = 0; i < out.extent(0); ++i)
            for (index_t j = 0; j < out.extent(1); ++j)
                for (index_t y = 0; y < out.extent(2); ++y)
                    for (index_t x2 = 0; x2 < out.extent(3); ++x2)
                        out.at({i, j, y, x2}) += factors[0].at({i, rho}) * factors[1].at({j, rho}) *
                                                 factors[2].at({y, rho}) * factors[3].at({x2, rho});
    return out;
}

}  // namespace oracle
