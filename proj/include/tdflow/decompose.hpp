#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tdflow/linalg.hpp"
#include "tdflow/tensor.hpp"

namespace tdflow {

enum class td_format : int { svd = 0, cpd = 1 };

inline const char* to_string(td_format f) { return f == td_format::svd ? "svd" : "cpd"; }

// Per-layer decomposition decision: format, channel grouping and rank.
struct td_config {
    td_format format = td_format::svd;
    index_t g1 = 1;  // output-channel groups
    index_t g2 = 1;  // input-channel groups
    index_t r = 1;   // rank per chunk

    bool operator==(const td_config&) const = default;
};

struct conv_shape {
    index_t c_out = 0, c_in = 0, k = 1;
};

// Ranks above this produce no compression headroom; candidate generation caps
// CPD ranks here.
inline index_t cpd_rank_cap(index_t c_out, index_t g1) { return 2 * (c_out / g1); }

inline index_t svd_max_rank(const conv_shape& s, index_t g1, index_t g2) {
    return std::min(s.c_out / g1, (s.c_in / g2) * s.k * s.k);
}

inline void validate_config(const td_config& cfg, const conv_shape& s) {
    if (cfg.g1 < 1 || s.c_out % cfg.g1 != 0)
        throw config_error("td config: g1=" + std::to_string(cfg.g1) + " does not divide c_out=" +
                           std::to_string(s.c_out));
    if (cfg.g2 < 1 || s.c_in % cfg.g2 != 0)
        throw config_error("td config: g2=" + std::to_string(cfg.g2) + " does not divide c_in=" +
                           std::to_string(s.c_in));
    if (cfg.r < 1) throw rank_error("td config: rank must be >= 1");
    if (cfg.format == td_format::svd && cfg.r > svd_max_rank(s, cfg.g1, cfg.g2))
        throw rank_error("td config: svd rank " + std::to_string(cfg.r) + " exceeds max " +
                         std::to_string(svd_max_rank(s, cfg.g1, cfg.g2)));
}

// Stored elements of one decomposed layer under cfg. SVD keeps two factor
// matrices per chunk, CPD keeps four vectors-per-rank factor matrices.
inline index_t param_count(const td_config& cfg, const conv_shape& s) {
    validate_config(cfg, s);
    const index_t co = s.c_out / cfg.g1;
    const index_t ci = s.c_in / cfg.g2;
    const index_t chunks = cfg.g1 * cfg.g2;
    if (cfg.format == td_format::svd) return chunks * (co + ci * s.k * s.k) * cfg.r;
    return chunks * (co + ci + s.k + s.k) * cfg.r;
}

// Largest rank at which the decomposed layer is no bigger than the original.
inline index_t break_even_rank(td_format f, const conv_shape& s, index_t g1, index_t g2) {
    const index_t full = s.c_out * s.c_in * s.k * s.k;
    const index_t per_rank = (f == td_format::svd)
                                 ? g1 * g2 * (s.c_out / g1 + (s.c_in / g2) * s.k * s.k)
                                 : g1 * g2 * (s.c_out / g1 + s.c_in / g2 + 2 * s.k);
    return full / per_rank;
}

struct als_settings {
    double tol = 1e-6;        // stop when per-sweep error improvement falls below
    int max_sweeps = 200;
    double ridge = 1e-12;     // added to the normal equations
    std::uint64_t seed = 1;
};

struct decomposed_chunk {
    td_format format = td_format::svd;
    std::vector<tensor> factors;  // svd: {u', v'}; cpd: {a1, a2, a3, a4}
    double error = 0.0;           // relative Frobenius error (absolute when reference is zero)
    bool error_is_absolute = false;
    bool converged = true;
    std::vector<double> error_history;  // cpd: error after each sweep

    index_t param_count() const {
        index_t n = 0;
        for (const auto& f : factors) n += f.size();
        return n;
    }
};

struct decomposed_layer {
    td_config config;
    conv_shape original;
    std::vector<decomposed_chunk> chunks;  // g1 x g2 grid, row-major

    const decomposed_chunk& chunk(index_t i, index_t j) const {
        return chunks[static_cast<std::size_t>(i * config.g2 + j)];
    }
    index_t param_count() const {
        index_t n = 0;
        for (const auto& c : chunks) n += c.param_count();
        return n;
    }
};

namespace detail {

inline tensor chunk_slice(const tensor& w, index_t i, index_t j, index_t co, index_t ci) {
    const index_t kh = w.extent(2), kw = w.extent(3);
    tensor out({co, ci, kh, kw});
    for (index_t o = 0; o < co; ++o)
        for (index_t c = 0; c < ci; ++c)
            for (index_t y = 0; y < kh; ++y)
                for (index_t x = 0; x < kw; ++x)
                    out.at({o, c, y, x}) = w.at({i * co + o, j * ci + c, y, x});
    return out;
}

inline void chunk_place(tensor& w, const tensor& chunk, index_t i, index_t j) {
    const index_t co = chunk.extent(0), ci = chunk.extent(1), kh = chunk.extent(2), kw = chunk.extent(3);
    for (index_t o = 0; o < co; ++o)
        for (index_t c = 0; c < ci; ++c)
            for (index_t y = 0; y < kh; ++y)
                for (index_t x = 0; x < kw; ++x)
                    w.at({i * co + o, j * ci + c, y, x}) = chunk.at({o, c, y, x});
}

// Mode-n unfolding: axis n first, remaining axes in increasing order.
inline tensor unfold(const tensor& t, index_t mode) {
    shape_t axes{mode};
    for (index_t a = 0; a < t.order(); ++a)
        if (a != mode) axes.push_back(a);
    return t.permute(axes).reshape({t.extent(mode), t.size() / t.extent(mode)});
}

inline double fit_error(const tensor& w, const tensor& approx, double w_norm, bool* absolute = nullptr) {
    double num = 0.0;
    for (index_t i = 0; i < w.size(); ++i) {
        const double d = w[i] - approx[i];
        num += d * d;
    }
    if (absolute) *absolute = (w_norm == 0.0);
    return w_norm == 0.0 ? std::sqrt(num) : std::sqrt(num) / w_norm;
}

}  // namespace detail

inline tensor reconstruct_chunk(const decomposed_chunk& c, const conv_shape& dims) {
    const index_t kh = dims.k, kw = dims.k;
    if (c.format == td_format::svd) {
        tensor m = matmul(c.factors[0], transpose(c.factors[1]));
        return std::move(m).reshape({dims.c_out, dims.c_in, kh, kw});
    }
    const tensor kr = khatri_rao({c.factors[1], c.factors[2], c.factors[3]});
    tensor m = matmul(c.factors[0], transpose(kr));
    return std::move(m).reshape({dims.c_out, dims.c_in, kh, kw});
}

// SVD route: reshape (c', c''*k*k), truncate, split sqrt(sigma) into both factors.
inline decomposed_chunk svd_decompose_chunk(const tensor& w, index_t r) {
    const index_t co = w.extent(0), rest = w.size() / co;
    const tensor mat = w.reshape({co, rest});
    svd_result svd = truncated_svd(mat, r);

    decomposed_chunk out;
    out.format = td_format::svd;
    tensor u = std::move(svd.u);
    tensor v = std::move(svd.v);
    for (index_t j = 0; j < r; ++j) {
        const double root = std::sqrt(svd.s[static_cast<std::size_t>(j)]);
        for (index_t i = 0; i < co; ++i) u.at({i, j}) *= root;
        for (index_t i = 0; i < rest; ++i) v.at({i, j}) *= root;
    }
    out.factors = {std::move(u), std::move(v)};
    conv_shape dims{co, w.extent(1), w.extent(2)};
    out.error = detail::fit_error(w, reconstruct_chunk(out, dims), w.frobenius_norm(), &out.error_is_absolute);
    return out;
}

// CPD route: alternating least squares over the four factor matrices.
inline decomposed_chunk cpd_decompose_chunk(const tensor& w, index_t r, const als_settings& als) {
    if (r < 1) throw rank_error("cpd: rank must be >= 1");
    if (w.order() != 4) throw shape_error("cpd: expected 4-d chunk");

    rng gen(als.seed);
    std::vector<tensor> factors;
    factors.reserve(4);
    for (index_t m = 0; m < 4; ++m) factors.push_back(tensor::random_uniform({w.extent(m), r}, gen));

    std::vector<tensor> unfoldings;
    unfoldings.reserve(4);
    for (index_t m = 0; m < 4; ++m) unfoldings.push_back(detail::unfold(w, m));

    const double w_norm = w.frobenius_norm();
    conv_shape dims{w.extent(0), w.extent(1), w.extent(2)};

    decomposed_chunk out;
    out.format = td_format::cpd;
    out.factors = factors;
    out.converged = false;

    double best_err = std::numeric_limits<double>::infinity();
    double prev_err = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < als.max_sweeps; ++sweep) {
        for (index_t m = 0; m < 4; ++m) {
            std::vector<tensor> others;
            for (index_t o = 0; o < 4; ++o)
                if (o != m) others.push_back(factors[static_cast<std::size_t>(o)]);
            const tensor kr = khatri_rao(others);
            const tensor mt = matmul(unfoldings[static_cast<std::size_t>(m)], kr);  // I_m x r
            tensor gram = matmul(transpose(kr), kr);
            for (index_t d = 0; d < r; ++d) gram.at({d, d}) += als.ridge;
            tensor rhs = transpose(mt);
            try {
                factors[static_cast<std::size_t>(m)] = transpose(solve_linear(gram, rhs));
            } catch (const numeric_error&) {
                // degenerate system (dead component); minimum-norm solve
                factors[static_cast<std::size_t>(m)] = transpose(solve_least_squares(gram, rhs));
            }
            if (m < 3) {
                // unit-normalize this factor's columns, pushing the scale into
                // the last factor; keeps the model identical and stops the
                // column-scale drift that makes the normal equations singular
                tensor& f = factors[static_cast<std::size_t>(m)];
                tensor& tail = factors[3];
                for (index_t col = 0; col < r; ++col) {
                    double nrm = 0.0;
                    for (index_t i = 0; i < f.extent(0); ++i) nrm += f.at({i, col}) * f.at({i, col});
                    nrm = std::sqrt(nrm);
                    if (nrm == 0.0) continue;
                    for (index_t i = 0; i < f.extent(0); ++i) f.at({i, col}) /= nrm;
                    for (index_t i = 0; i < tail.extent(0); ++i) tail.at({i, col}) *= nrm;
                }
            }
        }
        decomposed_chunk probe;
        probe.format = td_format::cpd;
        probe.factors = factors;
        bool absolute = false;
        const double err = detail::fit_error(w, reconstruct_chunk(probe, dims), w_norm, &absolute);
        out.error_history.push_back(err);
        if (err < best_err) {
            best_err = err;
            out.factors = factors;
            out.error = err;
            out.error_is_absolute = absolute;
        }
        if (prev_err - err < als.tol) {
            out.converged = true;
            break;
        }
        prev_err = err;
    }
    return out;
}

inline decomposed_layer decompose_layer(const tensor& w, const td_config& cfg, const als_settings& als) {
    if (w.order() != 4) throw shape_error("decompose_layer: weight must be 4-d");
    if (w.extent(2) != w.extent(3)) throw shape_error("decompose_layer: kernel must be square");
    const conv_shape shape{w.extent(0), w.extent(1), w.extent(2)};
    validate_config(cfg, shape);

    const index_t co = shape.c_out / cfg.g1;
    const index_t ci = shape.c_in / cfg.g2;

    decomposed_layer out;
    out.config = cfg;
    out.original = shape;
    out.chunks.reserve(static_cast<std::size_t>(cfg.g1 * cfg.g2));
    for (index_t i = 0; i < cfg.g1; ++i) {
        for (index_t j = 0; j < cfg.g2; ++j) {
            const tensor chunk = detail::chunk_slice(w, i, j, co, ci);
            if (cfg.format == td_format::svd) {
                out.chunks.push_back(svd_decompose_chunk(chunk, cfg.r));
            } else {
                als_settings chunk_als = als;
                chunk_als.seed = derive_seed(als.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
                out.chunks.push_back(cpd_decompose_chunk(chunk, cfg.r, chunk_als));
            }
        }
    }
    return out;
}

inline tensor reconstruct_layer(const decomposed_layer& d) {
    const conv_shape& s = d.original;
    const conv_shape dims{s.c_out / d.config.g1, s.c_in / d.config.g2, s.k};
    tensor out({s.c_out, s.c_in, s.k, s.k});
    for (index_t i = 0; i < d.config.g1; ++i)
        for (index_t j = 0; j < d.config.g2; ++j)
            detail::chunk_place(out, reconstruct_chunk(d.chunk(i, j), dims), i, j);
    return out;
}

struct recon_error {
    double value = 0.0;
    bool absolute = false;  // true when the reference tensor is zero
};

inline recon_error reconstruction_error(const decomposed_layer& d, const tensor& w) {
    if (w.order() != 4) throw shape_error("reconstruction_error: weight must be 4-d");
    const tensor rec = reconstruct_layer(d);
    if (rec.shape() != w.shape()) throw shape_error("reconstruction_error: shape mismatch");
    recon_error e;
    e.value = detail::fit_error(w, rec, w.frobenius_norm(), &e.absolute);
    return e;
}

inline double relative_error(const decomposed_layer& d, const tensor& w) {
    return reconstruction_error(d, w).value;
}

}  // namespace tdflow
