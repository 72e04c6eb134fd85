#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tdflow/tensor.hpp"

namespace tdflow {

// Factors of a truncated SVD: u is d1 x r, v is d2 x r, s holds the top-r
// singular values in non-increasing order.
struct svd_result {
    tensor u;
    std::vector<double> s;
    tensor v;

    tensor reconstruct() const {
        const index_t d1 = u.extent(0), r = u.extent(1), d2 = v.extent(0);
        tensor us({d1, r});
        for (index_t i = 0; i < d1; ++i)
            for (index_t j = 0; j < r; ++j) us.at({i, j}) = u.at({i, j}) * s[static_cast<std::size_t>(j)];
        tensor out({d1, d2});
        for (index_t i = 0; i < d1; ++i)
            for (index_t k = 0; k < r; ++k) {
                const double x = us.at({i, k});
                if (x == 0.0) continue;
                for (index_t j = 0; j < d2; ++j) out.at({i, j}) += x * v.at({j, k});
            }
        return out;
    }
};

namespace detail {

// Columns stored contiguously: col(j) is a span of n entries.
struct col_matrix {
    index_t rows = 0, cols = 0;
    std::vector<double> a;  // column-major

    col_matrix(index_t r, index_t c) : rows(r), cols(c), a(static_cast<std::size_t>(r * c), 0.0) {}

    double* col(index_t j) { return a.data() + j * rows; }
    const double* col(index_t j) const { return a.data() + j * rows; }
};

inline double dot(const double* x, const double* y, index_t n) {
    double s = 0.0;
    for (index_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

// One-sided Jacobi on the columns of w (rows >= cols recommended); the plane
// rotations are accumulated into v so that input = w_out * v^T with the
// columns of w_out orthogonal.
inline void one_sided_jacobi(col_matrix& w, col_matrix& v, int max_sweeps = 64) {
    const index_t n = w.cols;
    const double eps = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (index_t p = 0; p < n - 1; ++p) {
            for (index_t q = p + 1; q < n; ++q) {
                double* wp = w.col(p);
                double* wq = w.col(q);
                const double app = dot(wp, wp, w.rows);
                const double aqq = dot(wq, wq, w.rows);
                const double apq = dot(wp, wq, w.rows);
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (index_t i = 0; i < w.rows; ++i) {
                    const double a = wp[i], b = wq[i];
                    wp[i] = c * a - s * b;
                    wq[i] = s * a + c * b;
                }
                double* vp = v.col(p);
                double* vq = v.col(q);
                for (index_t i = 0; i < v.rows; ++i) {
                    const double a = vp[i], b = vq[i];
                    vp[i] = c * a - s * b;
                    vq[i] = s * a + c * b;
                }
            }
        }
        if (!rotated) return;
    }
    throw numeric_error("svd: Jacobi sweeps did not converge");
}

// Fill column j of m with a unit vector orthogonal to columns [0, j) by
// Gram-Schmidt over canonical basis candidates. Used to complete the basis
// behind (near-)zero singular values.
inline void orthonormal_fill(col_matrix& m, index_t j) {
    for (index_t trial = 0; trial < m.rows; ++trial) {
        const index_t cand = (j + trial) % m.rows;
        std::vector<double> e(static_cast<std::size_t>(m.rows), 0.0);
        e[static_cast<std::size_t>(cand)] = 1.0;
        for (index_t k = 0; k < j; ++k) {
            const double proj = dot(e.data(), m.col(k), m.rows);
            const double* ck = m.col(k);
            for (index_t i = 0; i < m.rows; ++i) e[static_cast<std::size_t>(i)] -= proj * ck[i];
        }
        const double nrm = std::sqrt(dot(e.data(), e.data(), m.rows));
        if (nrm > 1e-8) {
            double* cj = m.col(j);
            for (index_t i = 0; i < m.rows; ++i) cj[i] = e[static_cast<std::size_t>(i)] / nrm;
            return;
        }
    }
    throw numeric_error("svd: failed to complete orthonormal basis");
}

struct svd_full_result {
    col_matrix u;   // d1 x want
    std::vector<double> s;
    col_matrix v;   // d2 x want
};

// Computes the leading `want` singular triplets (all of them by default).
// When complete_basis is set, columns behind numerically-zero singular values
// are replaced by an orthonormal completion; callers that only consume the
// nonzero spectrum skip that work.
inline svd_full_result svd_full(const tensor& a, index_t want = -1, bool complete_basis = true) {
    const index_t d1 = a.extent(0), d2 = a.extent(1);
    const index_t k = std::min(d1, d2);
    if (want < 0 || want > k) want = k;

    if (a.frobenius_norm() == 0.0) {
        svd_full_result out{col_matrix(d1, want), std::vector<double>(static_cast<std::size_t>(want), 0.0),
                            col_matrix(d2, want)};
        for (index_t j = 0; j < want; ++j) {
            out.u.col(j)[j] = 1.0;
            out.v.col(j)[j] = 1.0;
        }
        return out;
    }
    if (d1 < d2) {
        auto r = svd_full(transpose(a), want, complete_basis);
        return {std::move(r.v), std::move(r.s), std::move(r.u)};
    }

    col_matrix w(d1, d2);
    for (index_t i = 0; i < d1; ++i)
        for (index_t j = 0; j < d2; ++j) w.col(j)[i] = a.at({i, j});
    col_matrix v(d2, d2);
    for (index_t j = 0; j < d2; ++j) v.col(j)[j] = 1.0;

    one_sided_jacobi(w, v);

    std::vector<double> sigma(static_cast<std::size_t>(k));
    for (index_t j = 0; j < k; ++j) sigma[static_cast<std::size_t>(j)] = std::sqrt(dot(w.col(j), w.col(j), d1));

    std::vector<index_t> ord(static_cast<std::size_t>(k));
    std::iota(ord.begin(), ord.end(), index_t{0});
    std::stable_sort(ord.begin(), ord.end(), [&](index_t x, index_t y) {
        return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
    });

    svd_full_result out{col_matrix(d1, want), std::vector<double>(static_cast<std::size_t>(want)), col_matrix(d2, want)};
    const double smax = sigma[static_cast<std::size_t>(ord[0])];
    const double tiny = smax * 1e-13;
    for (index_t j = 0; j < want; ++j) {
        const index_t src = ord[static_cast<std::size_t>(j)];
        const double sj = sigma[static_cast<std::size_t>(src)];
        out.s[static_cast<std::size_t>(j)] = sj;
        std::copy(v.col(src), v.col(src) + d2, out.v.col(j));
        if (sj > tiny && sj > 0.0) {
            const double inv = 1.0 / sj;
            for (index_t i = 0; i < d1; ++i) out.u.col(j)[i] = w.col(src)[i] * inv;
        } else if (complete_basis) {
            orthonormal_fill(out.u, j);
        }
    }
    return out;
}

inline tensor cols_to_tensor(const col_matrix& m, index_t ncols) {
    tensor t({m.rows, ncols});
    for (index_t j = 0; j < ncols; ++j)
        for (index_t i = 0; i < m.rows; ++i) t.at({i, j}) = m.col(j)[i];
    return t;
}

}  // namespace detail

// Best rank-r factors of a 2-d tensor (Eckart-Young optimum up to the solver
// tolerance). Throws rank_error when r is out of range.
inline svd_result truncated_svd(const tensor& a, index_t r) {
    if (a.order() != 2) throw shape_error("truncated_svd: input must be 2-d");
    const index_t d1 = a.extent(0), d2 = a.extent(1);
    if (r < 1 || r > std::min(d1, d2))
        throw rank_error("truncated_svd: rank " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
    auto full = detail::svd_full(a, r);
    svd_result out;
    out.u = detail::cols_to_tensor(full.u, r);
    out.v = detail::cols_to_tensor(full.v, r);
    out.s.assign(full.s.begin(), full.s.begin() + r);
    return out;
}

// Minimum-norm solution of min_x ||a x - b||_F via the pseudo-inverse.
// a is m x n, b is m x p, result is n x p.
inline tensor solve_least_squares(const tensor& a, const tensor& b) {
    if (a.order() != 2 || b.order() != 2) throw shape_error("solve_least_squares: operands must be 2-d");
    const index_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
    if (b.extent(0) != m) throw shape_error("solve_least_squares: row counts differ");
    auto full = detail::svd_full(a, -1, /*complete_basis=*/false);
    const index_t k = std::min(m, n);
    const double smax = full.s.empty() ? 0.0 : full.s[0];
    const double tol = static_cast<double>(std::max(m, n)) * 1e-15 * smax;

    // x = V diag(1/s) U^T b over the numerically nonzero spectrum
    tensor x({n, p});
    std::vector<double> utb(static_cast<std::size_t>(p));
    for (index_t j = 0; j < k; ++j) {
        const double sj = full.s[static_cast<std::size_t>(j)];
        if (sj <= tol || sj == 0.0) continue;
        const double* ucol = full.u.col(j);
        for (index_t c = 0; c < p; ++c) {
            double acc = 0.0;
            for (index_t i = 0; i < m; ++i) acc += ucol[i] * b.at({i, c});
            utb[static_cast<std::size_t>(c)] = acc / sj;
        }
        const double* vcol = full.v.col(j);
        for (index_t i = 0; i < n; ++i)
            for (index_t c = 0; c < p; ++c) x.at({i, c}) += vcol[i] * utb[static_cast<std::size_t>(c)];
    }
    return x;
}

// Column-wise Kronecker product: every input has r columns, output has
// prod(rows_i) rows and r columns.
inline tensor khatri_rao(std::span<const tensor> mats) {
    if (mats.empty()) throw shape_error("khatri_rao: no inputs");
    const index_t r = mats[0].extent(1);
    index_t rows = 1;
    for (const auto& m : mats) {
        if (m.order() != 2) throw shape_error("khatri_rao: inputs must be 2-d");
        if (m.extent(1) != r) throw shape_error("khatri_rao: column counts differ");
        rows *= m.extent(0);
    }
    tensor out({rows, r});
    for (index_t j = 0; j < r; ++j) {
        for (index_t i = 0; i < rows; ++i) {
            double prod = 1.0;
            index_t rem = i;
            // row i decomposes mixed-radix over the input row counts, most
            // significant factor first
            index_t base = rows;
            for (const auto& m : mats) {
                base /= m.extent(0);
                const index_t ri = rem / base;
                rem %= base;
                prod *= m.at({ri, j});
            }
            out.at({i, j}) = prod;
        }
    }
    return out;
}

inline tensor khatri_rao(std::initializer_list<tensor> mats) {
    return khatri_rao(std::span<const tensor>(mats.begin(), mats.size()));
}

// Gaussian elimination with partial pivoting; a is n x n, b is n x p.
// Intended for the small well-conditioned ridge systems of ALS.
inline tensor solve_linear(tensor a, tensor b) {
    if (a.order() != 2 || a.extent(0) != a.extent(1)) throw shape_error("solve_linear: a must be square");
    const index_t n = a.extent(0), p = b.extent(1);
    if (b.extent(0) != n) throw shape_error("solve_linear: row counts differ");
    for (index_t col = 0; col < n; ++col) {
        index_t piv = col;
        for (index_t i = col + 1; i < n; ++i)
            if (std::abs(a.at({i, col})) > std::abs(a.at({piv, col}))) piv = i;
        if (a.at({piv, col}) == 0.0) throw numeric_error("solve_linear: singular matrix");
        if (piv != col) {
            for (index_t j = 0; j < n; ++j) std::swap(a.at({col, j}), a.at({piv, j}));
            for (index_t j = 0; j < p; ++j) std::swap(b.at({col, j}), b.at({piv, j}));
        }
        const double d = a.at({col, col});
        for (index_t i = col + 1; i < n; ++i) {
            const double f = a.at({i, col}) / d;
            if (f == 0.0) continue;
            for (index_t j = col; j < n; ++j) a.at({i, j}) -= f * a.at({col, j});
            for (index_t j = 0; j < p; ++j) b.at({i, j}) -= f * b.at({col, j});
        }
    }
    tensor x({n, p});
    for (index_t i = n; i-- > 0;) {
        for (index_t j = 0; j < p; ++j) {
            double acc = b.at({i, j});
            for (index_t k2 = i + 1; k2 < n; ++k2) acc -= a.at({i, k2}) * x.at({k2, j});
            x.at({i, j}) = acc / a.at({i, i});
        }
    }
    return x;
}

}  // namespace tdflow
