#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "tdflow/common.hpp"

namespace tdflow {

using shape_t = std::vector<index_t>;

inline index_t shape_volume(std::span<const index_t> shape) {
    index_t v = 1;
    for (index_t e : shape) v *= e;
    return v;
}

inline std::string shape_str(std::span<const index_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// Dense row-major real tensor (last index fastest). Storage is double; blob
// files use float32, conversion happens at the I/O boundary.
class tensor {
public:
    tensor() = default;

    explicit tensor(shape_t shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_volume(shape_)), 0.0);
    }

    tensor(shape_t shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (shape_volume(shape_) != static_cast<index_t>(data_.size()))
            throw shape_error("tensor: data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }

    static tensor filled(shape_t shape, double value) {
        tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static tensor random_uniform(shape_t shape, rng& r, double lo = -1.0, double hi = 1.0) {
        tensor t(std::move(shape));
        for (auto& x : t.data_) x = r.uniform(lo, hi);
        return t;
    }

    const shape_t& shape() const { return shape_; }
    index_t order() const { return static_cast<index_t>(shape_.size()); }
    index_t extent(index_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    index_t size() const { return static_cast<index_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }

    double& operator[](index_t flat) { return data_[static_cast<std::size_t>(flat)]; }
    double operator[](index_t flat) const { return data_[static_cast<std::size_t>(flat)]; }

    shape_t strides() const {
        shape_t s(shape_.size());
        index_t acc = 1;
        for (std::size_t i = shape_.size(); i-- > 0;) {
            s[i] = acc;
            acc *= shape_[i];
        }
        return s;
    }

    double& at(std::initializer_list<index_t> idx) { return data_[static_cast<std::size_t>(flat_index(idx))]; }
    double at(std::initializer_list<index_t> idx) const { return data_[static_cast<std::size_t>(flat_index(idx))]; }

    index_t flat_index(std::initializer_list<index_t> idx) const {
        index_t flat = 0;
        std::size_t i = 0;
        for (index_t v : idx) {
            flat = flat * shape_[i] + v;
            ++i;
        }
        return flat;
    }

    tensor reshape(shape_t new_shape) const& {
        check_reshape(new_shape);
        return tensor(std::move(new_shape), data_);
    }

    tensor reshape(shape_t new_shape) && {
        check_reshape(new_shape);
        return tensor(std::move(new_shape), std::move(data_));
    }

    // t_out indexed by the permuted axes: out[i_axes[0], i_axes[1], ...] = in[i_0, i_1, ...]
    tensor permute(std::span<const index_t> axes) const {
        const auto m = shape_.size();
        if (axes.size() != m) throw shape_error("permute: axes count != tensor order");
        std::vector<bool> seen(m, false);
        for (index_t a : axes) {
            if (a < 0 || a >= static_cast<index_t>(m) || seen[static_cast<std::size_t>(a)])
                throw shape_error("permute: not a permutation of 0.." + std::to_string(m - 1));
            seen[static_cast<std::size_t>(a)] = true;
        }
        shape_t out_shape(m);
        for (std::size_t i = 0; i < m; ++i) out_shape[i] = shape_[static_cast<std::size_t>(axes[i])];
        tensor out(out_shape);
        if (m == 0 || size() == 0) return out;

        const shape_t in_strides = strides();
        shape_t out_stride_for_in_axis(m);  // stride in out for input axis j
        {
            shape_t out_strides = out.strides();
            for (std::size_t i = 0; i < m; ++i) out_stride_for_in_axis[static_cast<std::size_t>(axes[i])] = out_strides[i];
        }
        shape_t idx(m, 0);
        index_t out_flat = 0;
        for (index_t in_flat = 0; in_flat < size(); ++in_flat) {
            out.data_[static_cast<std::size_t>(out_flat)] = data_[static_cast<std::size_t>(in_flat)];
            // odometer increment over input indices
            for (std::size_t ax = m; ax-- > 0;) {
                idx[ax]++;
                out_flat += out_stride_for_in_axis[ax];
                if (idx[ax] < shape_[ax]) break;
                idx[ax] = 0;
                out_flat -= out_stride_for_in_axis[ax] * shape_[ax];
            }
        }
        return out;
    }

    tensor permute(std::initializer_list<index_t> axes) const {
        return permute(std::span<const index_t>(axes.begin(), axes.size()));
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    tensor& operator+=(const tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    tensor& operator-=(const tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    tensor& operator*=(double a) {
        for (auto& v : data_) v *= a;
        return *this;
    }

    friend tensor operator-(tensor a, const tensor& b) { return a -= b; }
    friend tensor operator+(tensor a, const tensor& b) { return a += b; }
    friend tensor operator*(tensor a, double s) { return a *= s; }

private:
    void validate_shape() const {
        for (index_t e : shape_)
            if (e < 1) throw shape_error("tensor: extent < 1 in shape " + shape_str(shape_));
    }

    void check_reshape(const shape_t& new_shape) const {
        for (index_t e : new_shape)
            if (e < 1) throw shape_error("reshape: extent < 1 in shape " + shape_str(new_shape));
        if (shape_volume(new_shape) != size())
            throw shape_error("reshape: volume mismatch " + shape_str(shape_) + " -> " + shape_str(new_shape));
    }

    void require_same_shape(const tensor& o) const {
        if (shape_ != o.shape_) throw shape_error("elementwise op: shape mismatch");
    }

    shape_t shape_;
    std::vector<double> data_;
};

// ‖a − b‖_F / ‖b‖_F, falling back to the absolute norm when b is zero.
inline double relative_diff(const tensor& a, const tensor& b) {
    if (a.shape() != b.shape()) throw shape_error("relative_diff: shape mismatch");
    double num = 0.0, den = 0.0;
    for (index_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num / den);
}

// (m,k) x (k,n) row-major matrix product.
inline tensor matmul(const tensor& a, const tensor& b) {
    if (a.order() != 2 || b.order() != 2) throw shape_error("matmul: operands must be 2-d");
    const index_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2) throw shape_error("matmul: inner extents differ");
    tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (index_t i = 0; i < m; ++i) {
        for (index_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + l * n;
            double* crow = pc + i * n;
            for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

inline tensor transpose(const tensor& a) {
    if (a.order() != 2) throw shape_error("transpose: operand must be 2-d");
    return a.permute({1, 0});
}

// Tensor contraction: sum over the paired axes; result shape is the free axes
// of a followed by the free axes of b. Full contractions yield shape [1].
inline tensor contract(const tensor& a, const tensor& b, std::span<const index_t> axes_a,
                       std::span<const index_t> axes_b) {
    if (axes_a.size() != axes_b.size()) throw shape_error("contract: axis lists differ in length");
    for (std::size_t i = 0; i < axes_a.size(); ++i) {
        if (axes_a[i] < 0 || axes_a[i] >= a.order() || axes_b[i] < 0 || axes_b[i] >= b.order())
            throw shape_error("contract: axis out of range");
        if (a.extent(axes_a[i]) != b.extent(axes_b[i]))
            throw shape_error("contract: extent mismatch on contracted axes (" +
                              std::to_string(a.extent(axes_a[i])) + " vs " +
                              std::to_string(b.extent(axes_b[i])) + ")");
    }

    auto free_axes = [](const tensor& t, std::span<const index_t> used) {
        shape_t free;
        for (index_t ax = 0; ax < t.order(); ++ax)
            if (std::find(used.begin(), used.end(), ax) == used.end()) free.push_back(ax);
        return free;
    };
    const shape_t free_a = free_axes(a, axes_a);
    const shape_t free_b = free_axes(b, axes_b);

    shape_t perm_a(free_a);
    perm_a.insert(perm_a.end(), axes_a.begin(), axes_a.end());
    shape_t perm_b(axes_b.begin(), axes_b.end());
    perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());

    index_t fa = 1, fb = 1, kk = 1;
    shape_t out_shape;
    for (index_t ax : free_a) {
        fa *= a.extent(ax);
        out_shape.push_back(a.extent(ax));
    }
    for (index_t ax : free_b) {
        fb *= b.extent(ax);
        out_shape.push_back(b.extent(ax));
    }
    for (index_t ax : axes_a) kk *= a.extent(ax);
    if (out_shape.empty()) out_shape.push_back(1);

    const tensor am = a.permute(perm_a).reshape({fa, kk});
    const tensor bm = b.permute(perm_b).reshape({kk, fb});
    return matmul(am, bm).reshape(std::move(out_shape));
}

inline tensor contract(const tensor& a, const tensor& b, std::initializer_list<index_t> axes_a,
                       std::initializer_list<index_t> axes_b) {
    return contract(a, b, std::span<const index_t>(axes_a.begin(), axes_a.size()),
                    std::span<const index_t>(axes_b.begin(), axes_b.size()));
}

}  // namespace tdflow
