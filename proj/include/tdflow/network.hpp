#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tdflow/decompose.hpp"
#include "tdflow/tensor.hpp"

namespace tdflow {

enum class layer_kind {
    conv,
    relu,
    maxpool,
    avgpool,
    global_avgpool,
    eltwise_add,
    fully_connected,
};

inline const char* to_string(layer_kind k) {
    switch (k) {
        case layer_kind::conv: return "conv";
        case layer_kind::relu: return "relu";
        case layer_kind::maxpool: return "maxpool";
        case layer_kind::avgpool: return "avgpool";
        case layer_kind::global_avgpool: return "global_avgpool";
        case layer_kind::eltwise_add: return "eltwise_add";
        case layer_kind::fully_connected: return "fully_connected";
    }
    return "?";
}

inline layer_kind layer_kind_from(const std::string& s) {
    for (layer_kind k : {layer_kind::conv, layer_kind::relu, layer_kind::maxpool, layer_kind::avgpool,
                         layer_kind::global_avgpool, layer_kind::eltwise_add, layer_kind::fully_connected})
        if (s == to_string(k)) return k;
    throw config_error("unknown layer kind '" + s + "'");
}

// Weighted layers: conv and fully_connected (the latter handled as a 1x1 conv
// on a 1x1 map everywhere).
inline bool is_decomposable(layer_kind k) { return k == layer_kind::conv || k == layer_kind::fully_connected; }

struct layer_spec {
    index_t id = 0;
    layer_kind kind = layer_kind::conv;
    index_t c_in = 0, c_out = 0;
    index_t k = 1, stride = 1, padding = 0;
    std::vector<index_t> predecessors;  // empty for the network input layer
    // optional per-output-channel affine (folded batch-norm scale/shift)
    bool has_scale = false, has_bias = false;
    std::string blob;  // weight file; empty means zero-initialized weights

    conv_shape weight_shape() const { return {c_out, c_in, kind == layer_kind::fully_connected ? 1 : k}; }

    index_t weight_elems() const {
        if (!is_decomposable(kind)) return 0;
        const conv_shape s = weight_shape();
        return s.c_out * s.c_in * s.k * s.k;
    }

    index_t affine_elems() const {
        return (has_scale ? c_out : 0) + (has_bias ? c_out : 0);
    }
};

using td_map = std::map<index_t, td_config>;

struct network_spec {
    index_t input_m = 0, input_n = 0, input_c = 0;
    std::vector<layer_spec> layers;  // must be topologically ordered
    std::unordered_map<index_t, tensor> weights;
    std::unordered_map<index_t, std::vector<double>> channel_scale;
    std::unordered_map<index_t, std::vector<double>> channel_bias;

    struct geometry {
        index_t m_in = 0, n_in = 0, m_out = 0, n_out = 0;
    };
    std::vector<geometry> geom;  // parallel to layers, filled by finalize()

    const layer_spec& layer_by_id(index_t id) const { return layers[position_of(id)]; }
    const geometry& geometry_of(index_t id) const { return geom[position_of(id)]; }

    std::size_t position_of(index_t id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw config_error("unknown layer id " + std::to_string(id));
        return it->second;
    }

    // Validates the DAG and shape invariants and computes per-layer spatial
    // geometry. Throws io_error naming the offending layer.
    void finalize() {
        index_.clear();
        geom.assign(layers.size(), {});
        if (layers.empty()) throw io_error("network: no layers");
        if (input_m < 1 || input_n < 1 || input_c < 1) throw io_error("network: bad input shape");

        std::vector<index_t> consumer_count(layers.size(), 0);
        for (std::size_t pos = 0; pos < layers.size(); ++pos) {
            const layer_spec& l = layers[pos];
            if (index_.count(l.id)) throw io_error("layer " + std::to_string(l.id) + ": duplicate id");

            index_t m_in = 0, n_in = 0, c_prev = 0;
            if (l.predecessors.empty()) {
                if (pos != 0) throw io_error("layer " + std::to_string(l.id) + ": only the first layer may have no predecessor");
                m_in = input_m;
                n_in = input_n;
                c_prev = input_c;
            } else {
                for (index_t p : l.predecessors) {
                    auto it = index_.find(p);
                    if (it == index_.end())
                        throw io_error("layer " + std::to_string(l.id) + ": predecessor " + std::to_string(p) +
                                       " missing or later in file (layers must be topologically ordered)");
                    consumer_count[it->second]++;
                }
                const auto& g0 = geom[index_.at(l.predecessors[0])];
                const auto& p0 = layers[index_.at(l.predecessors[0])];
                m_in = g0.m_out;
                n_in = g0.n_out;
                c_prev = out_channels(p0);
                if (l.kind == layer_kind::eltwise_add) {
                    if (l.predecessors.size() != 2)
                        throw io_error("layer " + std::to_string(l.id) + ": eltwise_add needs exactly 2 predecessors");
                    const auto& g1v = geom[index_.at(l.predecessors[1])];
                    const auto& p1 = layers[index_.at(l.predecessors[1])];
                    if (g1v.m_out != m_in || g1v.n_out != n_in || out_channels(p1) != c_prev)
                        throw io_error("layer " + std::to_string(l.id) + ": eltwise_add inputs differ in shape");
                } else if (l.predecessors.size() != 1) {
                    throw io_error("layer " + std::to_string(l.id) + ": expected exactly 1 predecessor");
                }
            }

            geometry g;
            g.m_in = m_in;
            g.n_in = n_in;
            switch (l.kind) {
                case layer_kind::conv:
                case layer_kind::maxpool:
                case layer_kind::avgpool:
                    g.m_out = (m_in + 2 * l.padding - l.k) / l.stride + 1;
                    g.n_out = (n_in + 2 * l.padding - l.k) / l.stride + 1;
                    if (g.m_out < 1 || g.n_out < 1)
                        throw io_error("layer " + std::to_string(l.id) + ": empty spatial output");
                    break;
                case layer_kind::global_avgpool:
                    g.m_out = g.n_out = 1;
                    break;
                case layer_kind::fully_connected:
                    if (m_in != 1 || n_in != 1)
                        throw io_error("layer " + std::to_string(l.id) + ": fully_connected expects 1x1 spatial input");
                    g.m_out = g.n_out = 1;
                    break;
                case layer_kind::relu:
                case layer_kind::eltwise_add:
                    g.m_out = m_in;
                    g.n_out = n_in;
                    break;
            }
            if (expects_channels(l.kind) && l.c_in != c_prev)
                throw io_error("layer " + std::to_string(l.id) + ": c_in=" + std::to_string(l.c_in) +
                               " but predecessor provides " + std::to_string(c_prev));

            if (is_decomposable(l.kind)) {
                auto it = weights.find(l.id);
                if (it != weights.end()) {
                    const conv_shape s = l.weight_shape();
                    const shape_t want{s.c_out, s.c_in, s.k, s.k};
                    if (it->second.shape() != want)
                        throw io_error("layer " + std::to_string(l.id) + ": weight shape " +
                                       shape_str(it->second.shape()) + " expected " + shape_str(want));
                } else {
                    const conv_shape s = l.weight_shape();
                    weights.emplace(l.id, tensor({s.c_out, s.c_in, s.k, s.k}));
                }
                if (l.has_scale && !channel_scale.count(l.id))
                    channel_scale[l.id] = std::vector<double>(static_cast<std::size_t>(l.c_out), 1.0);
                if (l.has_bias && !channel_bias.count(l.id))
                    channel_bias[l.id] = std::vector<double>(static_cast<std::size_t>(l.c_out), 0.0);
            }

            geom[pos] = g;
            index_[l.id] = pos;
        }
        // single output: exactly one layer is never consumed
        index_t sinks = 0;
        for (std::size_t pos = 0; pos < layers.size(); ++pos)
            if (consumer_count[pos] == 0) ++sinks;
        if (sinks != 1) throw io_error("network: expected a single output layer, found " + std::to_string(sinks));
    }

    index_t out_channels(const layer_spec& l) const {
        if (is_decomposable(l.kind)) return l.c_out;
        return l.c_in;  // pass-through kinds preserve channels
    }

    index_t total_params() const {
        index_t n = 0;
        for (const auto& l : layers) n += l.weight_elems() + l.affine_elems();
        return n;
    }

private:
    static bool expects_channels(layer_kind k) { return true; }

    std::unordered_map<index_t, std::size_t> index_;
};

// ---- executors -------------------------------------------------------------

// Direct convolution, channel-last activations, zero padding.
inline tensor conv_forward(const tensor& x, const layer_spec& l, const tensor& w) {
    if (x.order() != 4) throw shape_error("conv_forward: input must be b,m,n,c");
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2), ci = x.extent(3);
    const index_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != ci) throw shape_error("conv_forward: weight c_in mismatch");
    const index_t stride = l.kind == layer_kind::fully_connected ? 1 : l.stride;
    const index_t pad = l.kind == layer_kind::fully_connected ? 0 : l.padding;
    const index_t mo = (m + 2 * pad - kh) / stride + 1;
    const index_t no = (n + 2 * pad - kw) / stride + 1;

    tensor y({b, mo, no, co});
    const double* px = x.data();
    const double* pw = w.data();
    double* py = y.data();
    for (index_t ib = 0; ib < b; ++ib)
        for (index_t om = 0; om < mo; ++om)
            for (index_t on = 0; on < no; ++on) {
                double* yrow = py + ((ib * mo + om) * no + on) * co;
                for (index_t dy = 0; dy < kh; ++dy) {
                    const index_t iy = om * stride + dy - pad;
                    if (iy < 0 || iy >= m) continue;
                    for (index_t dx = 0; dx < kw; ++dx) {
                        const index_t ix = on * stride + dx - pad;
                        if (ix < 0 || ix >= n) continue;
                        const double* xrow = px + ((ib * m + iy) * n + ix) * ci;
                        for (index_t c = 0; c < ci; ++c) {
                            const double xv = xrow[c];
                            if (xv == 0.0) continue;
                            const double* wrow = pw + (c * kh + dy) * kw + dx;
                            for (index_t oc = 0; oc < co; ++oc)
                                yrow[oc] += xv * wrow[oc * ci * kh * kw];
                        }
                    }
                }
            }
    return y;
}

namespace detail {

inline tensor channel_slice(const tensor& x, index_t c0, index_t count) {
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2), c = x.extent(3);
    tensor out({b, m, n, count});
    for (index_t i = 0; i < b * m * n; ++i)
        for (index_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + c0 + j];
    return out;
}

inline void channel_accumulate(tensor& dst, const tensor& src, index_t c0) {
    const index_t c = dst.extent(3), cs = src.extent(3);
    const index_t positions = dst.size() / c;
    for (index_t i = 0; i < positions; ++i)
        for (index_t j = 0; j < cs; ++j) dst[i * c + c0 + j] += src[i * cs + j];
}

}  // namespace detail

// Executes the staged computation of a decomposed layer. SVD chunks run a
// k x k conv into rank channels then a 1x1 conv; CPD chunks run
// 1x1 -> depthwise k x 1 -> depthwise 1 x k -> 1x1. Chunk outputs are summed
// over input groups and concatenated over output groups.
inline tensor decomposed_conv_forward(const tensor& x, const layer_spec& l, const decomposed_layer& d) {
    const conv_shape s = l.weight_shape();
    if (d.original.c_out != s.c_out || d.original.c_in != s.c_in || d.original.k != s.k)
        throw shape_error("decomposed_conv_forward: decomposition does not match layer");
    const index_t g1 = d.config.g1, g2 = d.config.g2, r = d.config.r;
    const index_t co = s.c_out / g1, ci = s.c_in / g2, k = s.k;
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2);
    if (x.extent(3) != s.c_in) throw shape_error("decomposed_conv_forward: channel mismatch");
    const index_t stride = l.kind == layer_kind::fully_connected ? 1 : l.stride;
    const index_t pad = l.kind == layer_kind::fully_connected ? 0 : l.padding;
    const index_t mo = (m + 2 * pad - k) / stride + 1;
    const index_t no = (n + 2 * pad - k) / stride + 1;

    tensor out({b, mo, no, s.c_out});
    layer_spec stage1 = l;
    stage1.stride = stride;
    stage1.padding = pad;
    stage1.kind = layer_kind::conv;
    layer_spec pointwise = l;
    pointwise.kind = layer_kind::conv;
    pointwise.stride = 1;
    pointwise.padding = 0;

    for (index_t i = 0; i < g1; ++i) {
        for (index_t j = 0; j < g2; ++j) {
            const decomposed_chunk& c = d.chunk(i, j);
            const tensor xs = g2 == 1 ? x : detail::channel_slice(x, j * ci, ci);
            tensor partial;
            if (c.format == td_format::svd) {
                // stage 1: k x k conv producing r channels; kernel column rho of
                // v' unfolds row-major as (ci, k, k)
                const tensor& vp = c.factors[1];
                tensor k1({r, ci, k, k});
                for (index_t rho = 0; rho < r; ++rho)
                    for (index_t idx = 0; idx < ci * k * k; ++idx) k1[rho * ci * k * k + idx] = vp.at({idx, rho});
                tensor t1 = conv_forward(xs, stage1, k1);
                // stage 2: 1x1 conv r -> co with u'
                const tensor& up = c.factors[0];
                tensor k2({co, r, 1, 1});
                for (index_t o = 0; o < co; ++o)
                    for (index_t rho = 0; rho < r; ++rho) k2[o * r + rho] = up.at({o, rho});
                partial = conv_forward(t1, pointwise, k2);
            } else {
                const tensor& a1 = c.factors[0];
                const tensor& a2 = c.factors[1];
                const tensor& a3 = c.factors[2];
                const tensor& a4 = c.factors[3];
                // stage 1: 1x1 conv ci -> r on the input grid
                tensor z({b, m, n, r});
                for (index_t p = 0; p < b * m * n; ++p)
                    for (index_t cc = 0; cc < ci; ++cc) {
                        const double xv = xs[p * ci + cc];
                        if (xv == 0.0) continue;
                        for (index_t rho = 0; rho < r; ++rho) z[p * r + rho] += xv * a2.at({cc, rho});
                    }
                // stage 2: depthwise k x 1, vertical stride/padding
                tensor u({b, mo, n, r});
                for (index_t ib = 0; ib < b; ++ib)
                    for (index_t p = 0; p < mo; ++p)
                        for (index_t q = 0; q < n; ++q)
                            for (index_t dy = 0; dy < k; ++dy) {
                                const index_t iy = p * stride + dy - pad;
                                if (iy < 0 || iy >= m) continue;
                                const double* zrow = z.data() + ((ib * m + iy) * n + q) * r;
                                double* urow = u.data() + ((ib * mo + p) * n + q) * r;
                                for (index_t rho = 0; rho < r; ++rho) urow[rho] += a3.at({dy, rho}) * zrow[rho];
                            }
                // stage 3: depthwise 1 x k, horizontal stride/padding
                tensor v({b, mo, no, r});
                for (index_t ib = 0; ib < b; ++ib)
                    for (index_t p = 0; p < mo; ++p)
                        for (index_t q = 0; q < no; ++q)
                            for (index_t dx = 0; dx < k; ++dx) {
                                const index_t ix = q * stride + dx - pad;
                                if (ix < 0 || ix >= n) continue;
                                const double* urow = u.data() + ((ib * mo + p) * n + ix) * r;
                                double* vrow = v.data() + ((ib * mo + p) * no + q) * r;
                                for (index_t rho = 0; rho < r; ++rho) vrow[rho] += a4.at({dx, rho}) * urow[rho];
                            }
                // stage 4: 1x1 conv r -> co
                tensor k2({co, r, 1, 1});
                for (index_t o = 0; o < co; ++o)
                    for (index_t rho = 0; rho < r; ++rho) k2[o * r + rho] = a1.at({o, rho});
                partial = conv_forward(v, pointwise, k2);
            }
            detail::channel_accumulate(out, partial, i * co);
        }
    }
    return out;
}

inline tensor relu_forward(tensor x) {
    for (index_t i = 0; i < x.size(); ++i) x[i] = std::max(0.0, x[i]);
    return x;
}

inline tensor pool_forward(const tensor& x, const layer_spec& l) {
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2), c = x.extent(3);
    const index_t mo = (m + 2 * l.padding - l.k) / l.stride + 1;
    const index_t no = (n + 2 * l.padding - l.k) / l.stride + 1;
    const bool is_max = l.kind == layer_kind::maxpool;
    tensor y({b, mo, no, c});
    for (index_t ib = 0; ib < b; ++ib)
        for (index_t om = 0; om < mo; ++om)
            for (index_t on = 0; on < no; ++on)
                for (index_t cc = 0; cc < c; ++cc) {
                    double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
                    index_t count = 0;
                    for (index_t dy = 0; dy < l.k; ++dy)
                        for (index_t dx = 0; dx < l.k; ++dx) {
                            const index_t iy = om * l.stride + dy - l.padding;
                            const index_t ix = on * l.stride + dx - l.padding;
                            if (iy < 0 || iy >= m || ix < 0 || ix >= n) continue;
                            const double v = x.at({ib, iy, ix, cc});
                            if (is_max)
                                acc = std::max(acc, v);
                            else
                                acc += v;
                            ++count;
                        }
                    y.at({ib, om, on, cc}) = is_max ? acc : acc / static_cast<double>(count);
                }
    return y;
}

inline tensor global_avgpool_forward(const tensor& x) {
    const index_t b = x.extent(0), m = x.extent(1), n = x.extent(2), c = x.extent(3);
    tensor y({b, 1, 1, c});
    for (index_t ib = 0; ib < b; ++ib)
        for (index_t cc = 0; cc < c; ++cc) {
            double s = 0.0;
            for (index_t i = 0; i < m; ++i)
                for (index_t j = 0; j < n; ++j) s += x.at({ib, i, j, cc});
            y.at({ib, 0, 0, cc}) = s / static_cast<double>(m * n);
        }
    return y;
}

inline void apply_affine(tensor& x, const std::vector<double>* scale, const std::vector<double>* bias) {
    if (!scale && !bias) return;
    const index_t c = x.extent(3);
    const index_t positions = x.size() / c;
    for (index_t i = 0; i < positions; ++i)
        for (index_t j = 0; j < c; ++j) {
            double v = x[i * c + j];
            if (scale) v *= (*scale)[static_cast<std::size_t>(j)];
            if (bias) v += (*bias)[static_cast<std::size_t>(j)];
            x[i * c + j] = v;
        }
}

// Topological execution. Conv-like layers with an entry in `decomposed` run the
// staged executor, everything else runs the direct kernels.
inline tensor network_forward(const network_spec& net, const tensor& x,
                              const std::map<index_t, decomposed_layer>* decomposed = nullptr) {
    if (x.order() != 4 || x.extent(1) != net.input_m || x.extent(2) != net.input_n || x.extent(3) != net.input_c)
        throw shape_error("network_forward: input shape does not match network");
    std::unordered_map<index_t, tensor> outputs;
    const tensor* last = nullptr;
    for (const layer_spec& l : net.layers) {
        const tensor& in0 = l.predecessors.empty() ? x : outputs.at(l.predecessors[0]);
        tensor out;
        switch (l.kind) {
            case layer_kind::conv:
            case layer_kind::fully_connected: {
                const decomposed_layer* d = nullptr;
                if (decomposed) {
                    auto it = decomposed->find(l.id);
                    if (it != decomposed->end()) d = &it->second;
                }
                out = d ? decomposed_conv_forward(in0, l, *d) : conv_forward(in0, l, net.weights.at(l.id));
                auto sit = net.channel_scale.find(l.id);
                auto bit = net.channel_bias.find(l.id);
                apply_affine(out, sit != net.channel_scale.end() ? &sit->second : nullptr,
                             bit != net.channel_bias.end() ? &bit->second : nullptr);
                break;
            }
            case layer_kind::relu:
                out = relu_forward(in0);
                break;
            case layer_kind::maxpool:
            case layer_kind::avgpool:
                out = pool_forward(in0, l);
                break;
            case layer_kind::global_avgpool:
                out = global_avgpool_forward(in0);
                break;
            case layer_kind::eltwise_add: {
                out = in0;
                out += outputs.at(l.predecessors[1]);
                break;
            }
        }
        auto [it, ok] = outputs.emplace(l.id, std::move(out));
        last = &it->second;
    }
    return *last;
}

// ---- counting --------------------------------------------------------------

// MACs of the direct (undecomposed) layer.
inline index_t direct_macs(const layer_spec& l, const network_spec::geometry& g) {
    if (!is_decomposable(l.kind)) return 0;
    const conv_shape s = l.weight_shape();
    return g.m_out * g.n_out * s.c_out * s.c_in * s.k * s.k;
}

// MACs of the staged computation under cfg, summed over stages and chunks.
inline index_t decomposed_macs(const layer_spec& l, const network_spec::geometry& g, const td_config& cfg) {
    const conv_shape s = l.weight_shape();
    validate_config(cfg, s);
    const index_t co = s.c_out / cfg.g1, ci = s.c_in / cfg.g2, k = s.k, r = cfg.r;
    const index_t chunks = cfg.g1 * cfg.g2;
    if (cfg.format == td_format::svd) {
        const index_t stage1 = g.m_out * g.n_out * r * ci * k * k;
        const index_t stage2 = g.m_out * g.n_out * co * r;
        return chunks * (stage1 + stage2);
    }
    const index_t stage1 = g.m_in * g.n_in * ci * r;
    const index_t stage2 = g.m_out * g.n_in * k * r;
    const index_t stage3 = g.m_out * g.n_out * k * r;
    const index_t stage4 = g.m_out * g.n_out * co * r;
    return chunks * (stage1 + stage2 + stage3 + stage4);
}

inline index_t layer_macs(const network_spec& net, const layer_spec& l, const td_map* td) {
    const auto& g = net.geometry_of(l.id);
    if (td && is_decomposable(l.kind)) {
        auto it = td->find(l.id);
        if (it != td->end()) return decomposed_macs(l, g, it->second);
    }
    return direct_macs(l, g);
}

inline index_t count_macs(const network_spec& net, const td_map* td = nullptr) {
    index_t total = 0;
    for (const auto& l : net.layers) total += layer_macs(net, l, td);
    return total;
}

inline index_t count_params(const network_spec& net, const td_map* td = nullptr) {
    index_t total = 0;
    for (const auto& l : net.layers) {
        index_t w = l.weight_elems();
        if (td && is_decomposable(l.kind)) {
            auto it = td->find(l.id);
            if (it != td->end()) w = param_count(it->second, l.weight_shape());
        }
        total += w + l.affine_elems();
    }
    return total;
}

// Memory footprint in bits: stored parameter count times width.
inline index_t count_memory_bits(const network_spec& net, const td_map* td, index_t bits_per_weight) {
    if (bits_per_weight < 1) throw config_error("count_memory_bits: bits_per_weight must be positive");
    return count_params(net, td) * bits_per_weight;
}

// BitOPs counted as 2 x W x A per MAC.
inline index_t count_bitops(const network_spec& net, const td_map* td, index_t w_bits, index_t a_bits) {
    if (w_bits < 1 || a_bits < 1) throw config_error("count_bitops: bit widths must be positive");
    return count_macs(net, td) * 2 * w_bits * a_bits;
}

// ---- accuracy proxy ---------------------------------------------------------

struct probe_set {
    // reconstruction mode when inputs are absent: proxy is one minus the
    // MAC-weighted mean relative reconstruction error
    tensor inputs;  // (b, m, n, c) when labeled
    std::vector<index_t> labels;

    bool labeled() const { return inputs.order() == 4; }
};

inline double top1_accuracy(const tensor& logits, const std::vector<index_t>& labels) {
    const index_t b = logits.extent(0);
    const index_t c = logits.extent(3);
    index_t hits = 0;
    for (index_t i = 0; i < b; ++i) {
        index_t best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (index_t j = 0; j < c; ++j) {
            const double v = logits[(i * logits.extent(1) * logits.extent(2)) * c + j];
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        if (best == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

// Relative reconstruction error of one layer under cfg; exposed separately so
// search evaluators can cache per-(layer, cfg) results.
inline double layer_recon_error(const network_spec& net, index_t layer_id, const td_config& cfg,
                                const als_settings& als) {
    const layer_spec& l = net.layer_by_id(layer_id);
    als_settings layer_als = als;
    layer_als.seed = derive_seed(als.seed, static_cast<std::uint64_t>(layer_id));
    const decomposed_layer d = decompose_layer(net.weights.at(layer_id), cfg, layer_als);
    return relative_error(d, net.weights.at(layer_id));
}

// Single-batch accuracy proxy. Labeled probes decompose the network (no
// fine-tuning) and score top-1 on that batch; reconstruction mode returns
// 1 - weighted mean relative layer error with MAC-count weights.
inline double accuracy_proxy(const network_spec& net, const td_map& td, const probe_set& probe,
                             const als_settings& als) {
    for (const auto& l : net.layers)
        if (is_decomposable(l.kind) && !td.count(l.id))
            throw config_error("accuracy_proxy: td config missing for layer " + std::to_string(l.id));

    if (probe.labeled()) {
        if (probe.inputs.extent(0) == 0 || probe.labels.size() != static_cast<std::size_t>(probe.inputs.extent(0)))
            throw config_error("accuracy_proxy: probe batch empty or label count mismatch");
        std::map<index_t, decomposed_layer> dec;
        for (const auto& [id, cfg] : td) {
            als_settings layer_als = als;
            layer_als.seed = derive_seed(als.seed, static_cast<std::uint64_t>(id));
            dec.emplace(id, decompose_layer(net.weights.at(id), cfg, layer_als));
        }
        const tensor logits = network_forward(net, probe.inputs, &dec);
        return top1_accuracy(logits, probe.labels);
    }

    double weighted = 0.0, weight_sum = 0.0;
    for (const auto& [id, cfg] : td) {
        const layer_spec& l = net.layer_by_id(id);
        const double w = static_cast<double>(direct_macs(l, net.geometry_of(id)));
        weighted += w * layer_recon_error(net, id, cfg, als);
        weight_sum += w;
    }
    if (weight_sum == 0.0) throw config_error("accuracy_proxy: no decomposable layers covered");
    return 1.0 - weighted / weight_sum;
}

}  // namespace tdflow
