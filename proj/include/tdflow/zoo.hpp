#pragma once

// Small built-in model descriptions used by the CLI and the test suites:
// a three-conv toy network, a toy classifier with pooling and a head, and the
// shape-only ResNet-18 description (descriptors and affine declarations, zero
// weights) for counting studies.

#include <vector>

#include "tdflow/network.hpp"

namespace tdflow::zoo {

// 3 conv layers on an 8x8x3 input; seeded random weights.
inline network_spec tiny_cnn(std::uint64_t seed = 1) {
    network_spec net;
    net.input_m = net.input_n = 8;
    net.input_c = 3;
    net.layers = {
        {0, layer_kind::conv, 3, 8, 3, 1, 1, {}, false, false, ""},
        {1, layer_kind::conv, 8, 8, 3, 2, 1, {0}, false, false, ""},
        {2, layer_kind::conv, 8, 4, 1, 1, 0, {1}, false, false, ""},
    };
    rng gen(derive_seed(seed, 0x71c0));
    for (const auto& l : net.layers) {
        const conv_shape s = l.weight_shape();
        net.weights.emplace(l.id, tensor::random_uniform({s.c_out, s.c_in, s.k, s.k}, gen));
    }
    net.finalize();
    return net;
}

// conv/relu/maxpool/conv/relu/residual-add/global_avgpool/fc classifier on an
// 8x8x3 input; exercises every layer kind.
inline network_spec tiny_classifier(std::uint64_t seed = 2) {
    network_spec net;
    net.input_m = net.input_n = 8;
    net.input_c = 3;
    net.layers = {
        {0, layer_kind::conv, 3, 8, 3, 1, 1, {}, false, false, ""},
        {1, layer_kind::relu, 8, 8, 1, 1, 0, {0}, false, false, ""},
        {2, layer_kind::maxpool, 8, 8, 2, 2, 0, {1}, false, false, ""},
        {3, layer_kind::conv, 8, 8, 3, 1, 1, {2}, false, false, ""},
        {4, layer_kind::relu, 8, 8, 1, 1, 0, {3}, false, false, ""},
        {5, layer_kind::eltwise_add, 8, 8, 1, 1, 0, {2, 4}, false, false, ""},
        {6, layer_kind::global_avgpool, 8, 8, 1, 1, 0, {5}, false, false, ""},
        {7, layer_kind::fully_connected, 8, 4, 1, 1, 0, {6}, false, true, ""},
    };
    rng gen(derive_seed(seed, 0x71c1));
    for (const auto& l : net.layers) {
        if (!is_decomposable(l.kind)) continue;
        const conv_shape s = l.weight_shape();
        net.weights.emplace(l.id, tensor::random_uniform({s.c_out, s.c_in, s.k, s.k}, gen));
        if (l.has_bias) net.channel_bias[l.id] = std::vector<double>(static_cast<std::size_t>(l.c_out), 0.1);
    }
    net.finalize();
    return net;
}

// Standard ResNet-18 for 224x224x3 inputs. Descriptors only: weights stay
// zero. Convs carry the folded batch-norm per-channel scale+shift, the
// classifier carries a bias, which reproduces the standard 11,689,512
// parameter total.
inline network_spec resnet18_shapes() {
    network_spec net;
    net.input_m = net.input_n = 224;
    net.input_c = 3;
    index_t id = 0;
    const auto conv = [&](index_t c_in, index_t c_out, index_t k, index_t stride, index_t padding,
                          std::vector<index_t> preds) {
        net.layers.push_back({id, layer_kind::conv, c_in, c_out, k, stride, padding, std::move(preds), true, true, ""});
        return id++;
    };
    const auto relu = [&](index_t c, index_t pred) {
        net.layers.push_back({id, layer_kind::relu, c, c, 1, 1, 0, {pred}, false, false, ""});
        return id++;
    };
    const auto add = [&](index_t c, index_t a, index_t b) {
        net.layers.push_back({id, layer_kind::eltwise_add, c, c, 1, 1, 0, {a, b}, false, false, ""});
        return id++;
    };

    index_t cur = conv(3, 64, 7, 2, 3, {});
    cur = relu(64, cur);
    net.layers.push_back({id, layer_kind::maxpool, 64, 64, 3, 2, 1, {cur}, false, false, ""});
    cur = id++;

    index_t c_prev = 64;
    for (index_t stage = 0; stage < 4; ++stage) {
        const index_t c = 64 << stage;
        for (int block = 0; block < 2; ++block) {
            const bool downsample = stage > 0 && block == 0;
            const index_t stride = downsample ? 2 : 1;
            const index_t block_in = cur;
            index_t x = conv(c_prev, c, 3, stride, 1, {block_in});
            x = relu(c, x);
            x = conv(c, c, 3, 1, 1, {x});
            index_t shortcut = block_in;
            if (downsample) shortcut = conv(c_prev, c, 1, 2, 0, {block_in});
            x = add(c, x, shortcut);
            cur = relu(c, x);
            c_prev = c;
        }
    }
    net.layers.push_back({id, layer_kind::global_avgpool, 512, 512, 1, 1, 0, {cur}, false, false, ""});
    cur = id++;
    net.layers.push_back({id, layer_kind::fully_connected, 512, 1000, 1, 1, 0, {cur}, false, true, ""});
    net.finalize();
    return net;
}

// Reference decomposition for the shape-only ResNet-18: layer-specific SVD
// on the 3x3 convs with CPD on the 1x1 shortcut convs and the classifier.
inline td_map resnet18_reference_td(const network_spec& net) {
    td_map td;
    for (const auto& l : net.layers) {
        if (!is_decomposable(l.kind)) continue;
        const conv_shape s = l.weight_shape();
        td_config cfg;
        if (s.k == 1) {
            cfg.format = td_format::cpd;
            cfg.g1 = cfg.g2 = 1;
            cfg.r = std::max<index_t>(1, (s.c_out + s.c_in) / 5);
        } else {
            // deeper stages tolerate lower relative rank
            const index_t c = std::min(s.c_out, s.c_in);
            const double frac = c <= 128 ? 0.45 : (c <= 256 ? 0.36 : 0.30);
            cfg.format = td_format::svd;
            cfg.g1 = cfg.g2 = 1;
            cfg.r = std::max<index_t>(1, static_cast<index_t>(std::llround(frac * static_cast<double>(c))));
            cfg.r = std::min(cfg.r, svd_max_rank(s, 1, 1));
        }
        td[l.id] = cfg;
    }
    return td;
}

// Random probe batch with arbitrary labels; deterministic in the seed.
inline probe_set random_probe(const network_spec& net, index_t batch, index_t classes, std::uint64_t seed) {
    rng gen(derive_seed(seed, 0x9e0b));
    probe_set p;
    p.inputs = tensor::random_uniform({batch, net.input_m, net.input_n, net.input_c}, gen);
    p.labels.resize(static_cast<std::size_t>(batch));
    for (auto& l : p.labels) l = gen.below(classes);
    return p;
}

}  // namespace tdflow::zoo
