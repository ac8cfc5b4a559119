#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitquant/errors.hpp"

namespace splitquant {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t num_elements(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Signed integer target range [qmin, qmax].
struct IntRange {
    std::int32_t qmin = -128;
    std::int32_t qmax = 127;

    /// [-2^(b-1), 2^(b-1)-1]
    static IntRange for_bits(int bits) {
        if (bits < 2 || bits > 16) throw ArgumentError("bit-width must be in [2, 16], got " + std::to_string(bits));
        const std::int32_t half = std::int32_t{1} << (bits - 1);
        return {-half, half - 1};
    }

    static IntRange explicit_range(std::int32_t qmin, std::int32_t qmax) {
        if (qmin >= qmax)
            throw ArgumentError("integer range requires qmin < qmax, got [" + std::to_string(qmin) + ", " +
                                std::to_string(qmax) + "]");
        return {qmin, qmax};
    }

    std::int64_t levels() const noexcept { return std::int64_t{qmax} - qmin; }

    friend bool operator==(const IntRange &, const IntRange &) = default;
};

enum class DType { FP32, INT2, INT4, INT8 };

inline int bit_width(DType t) {
    switch (t) {
        case DType::FP32: return 32;
        case DType::INT2: return 2;
        case DType::INT4: return 4;
        case DType::INT8: return 8;
    }
    return 32;
}

inline IntRange int_range(DType t) {
    if (t == DType::FP32) throw ArgumentError("FP32 has no integer range");
    return IntRange::for_bits(bit_width(t));
}

/// Dense row-major FP32 tensor.
class Tensor {
  public:
    Tensor() : shape_{1}, data_(1, 0.0f) {}

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(num_elements(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != num_elements(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 to_string(shape_));
    }

    static Tensor vector(std::vector<float> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<float> data;
        data.reserve(r * c);
        for (const auto &row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor zeros_like(const Tensor &t) { return Tensor(t.shape()); }

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const float> values() const noexcept { return data_; }
    std::span<float> values() noexcept { return data_; }
    const std::vector<float> &data() const noexcept { return data_; }

    float operator[](std::size_t i) const { return data_[i]; }
    float &operator[](std::size_t i) { return data_[i]; }

    float at(std::size_t r, std::size_t c) const { return data_[r * shape_.at(1) + c]; }

    float min() const { return *std::min_element(data_.begin(), data_.end()); }
    float max() const { return *std::max_element(data_.begin(), data_.end()); }

    Tensor reshaped(Shape shape) const {
        if (num_elements(shape) != data_.size())
            throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        return Tensor(std::move(shape), data_);
    }

    /// Bit-exact comparison (shape and raw float bits).
    friend bool operator==(const Tensor &a, const Tensor &b) {
        if (a.shape_ != b.shape_) return false;
        for (std::size_t i = 0; i < a.data_.size(); ++i)
            if (std::bit_cast<std::uint32_t>(a.data_[i]) != std::bit_cast<std::uint32_t>(b.data_[i])) return false;
        return true;
    }

  private:
    static void check_shape(const Shape &shape) {
        if (shape.empty()) throw DimensionError("tensor shape must be non-empty");
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor dimensions must be >= 1, got " + to_string(shape));
    }

    Shape shape_;
    std::vector<float> data_;
};

namespace detail {

inline std::size_t normalize_axis(long axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    if (axis < -r || axis >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// outer x axis x inner decomposition of a shape around one axis
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape &shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace detail

// Kernels. Accumulation runs over the reduction index in ascending order,
// so results are reproducible run to run.

inline Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
            ov[i * n + j] = acc;
        }
    }
    return out;
}

/// y = x W^T + b applied over the last axis of x. W is [out x in].
inline Tensor linear(const Tensor &x, const Tensor &weight, const Tensor *bias) {
    if (weight.rank() != 2) throw DimensionError("linear weight must be 2-D, got " + to_string(weight.shape()));
    const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
    if (x.shape().back() != in_f)
        throw DimensionError("linear input " + to_string(x.shape()) + " does not match weight " +
                             to_string(weight.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != out_f))
        throw DimensionError("linear bias " + to_string(bias->shape()) + " does not match weight " +
                             to_string(weight.shape()));
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    Tensor out(out_shape);
    const std::size_t rows = x.size() / in_f;
    const auto xv = x.values();
    const auto wv = weight.values();
    auto ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_f; ++o) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < in_f; ++i) acc += xv[r * in_f + i] * wv[o * in_f + i];
            ov[r * out_f + o] = bias ? acc + (*bias)[o] : acc;
        }
    }
    return out;
}

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

inline Shape conv2d_output_shape(const Shape &input, const Shape &weight, Conv2dParams p) {
    if (input.size() != 3) throw DimensionError("conv2d input must be [C x H x W], got " + to_string(input));
    if (weight.size() != 4) throw DimensionError("conv2d weight must be 4-D, got " + to_string(weight));
    if (p.stride < 1) throw DimensionError("conv2d stride must be >= 1");
    if (weight[1] != input[0])
        throw DimensionError("conv2d channel mismatch: input " + to_string(input) + ", weight " + to_string(weight));
    const std::size_t ph = input[1] + 2 * p.padding, pw = input[2] + 2 * p.padding;
    if (weight[2] > ph || weight[3] > pw)
        throw DimensionError("conv2d kernel " + to_string(weight) + " larger than padded input " + to_string(input));
    return {weight[0], (ph - weight[2]) / p.stride + 1, (pw - weight[3]) / p.stride + 1};
}

/// Cross-correlation over a single [C_in x H x W] image.
inline Tensor conv2d(const Tensor &input, const Tensor &weight, const Tensor *bias, Conv2dParams p = {}) {
    const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), p);
    const std::size_t c_out = weight.dim(0), c_in = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (bias && (bias->rank() != 1 || bias->dim(0) != c_out))
        throw DimensionError("conv2d bias " + to_string(bias->shape()) + " does not match C_out=" +
                             std::to_string(c_out));
    const std::size_t h = input.dim(1), w = input.dim(2);
    const std::size_t oh = out_shape[1], ow = out_shape[2];
    const long pad = static_cast<long>(p.padding);
    Tensor out(out_shape);
    const auto iv = input.values();
    const auto wv = weight.values();
    auto ov = out.values();
    for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float acc = 0.0f;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const long iy = static_cast<long>(oy * p.stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long ix = static_cast<long>(ox * p.stride + kx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            acc += iv[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                                   wv[((co * c_in + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                ov[(co * oh + oy) * ow + ox] = bias ? acc + (*bias)[co] : acc;
            }
        }
    }
    return out;
}

inline Tensor elementwise_add(const Tensor &a, const Tensor &b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor slice(const Tensor &t, long axis, std::size_t start, std::size_t len) {
    const std::size_t ax = detail::normalize_axis(axis, t.rank());
    if (len == 0 || start + len > t.dim(ax))
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of bounds for axis " + std::to_string(ax) + " of " + to_string(t.shape()));
    Shape out_shape = t.shape();
    out_shape[ax] = len;
    Tensor out(out_shape);
    const auto v = detail::axis_view(t.shape(), ax);
    const auto src = t.values();
    auto dst = out.values();
    for (std::size_t o = 0; o < v.outer; ++o) {
        const float *from = src.data() + (o * v.extent + start) * v.inner;
        std::copy(from, from + len * v.inner, dst.data() + o * len * v.inner);
    }
    return out;
}

inline Tensor concat(std::span<const Tensor> parts, long axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const std::size_t ax = detail::normalize_axis(axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    std::size_t total = 0;
    for (const auto &p : parts) {
        bool ok = p.rank() == out_shape.size();
        for (std::size_t i = 0; ok && i < out_shape.size(); ++i)
            if (i != ax && p.dim(i) != out_shape[i]) ok = false;
        if (!ok)
            throw DimensionError("concat shape mismatch along axis " + std::to_string(ax) + ": " +
                                 to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
        total += p.dim(ax);
    }
    out_shape[ax] = total;
    Tensor out(out_shape);
    const auto v = detail::axis_view(out_shape, ax);
    auto dst = out.values();
    std::size_t offset = 0;
    for (const auto &p : parts) {
        const std::size_t chunk = p.dim(ax) * v.inner;
        const auto src = p.values();
        for (std::size_t o = 0; o < v.outer; ++o)
            std::copy(src.data() + o * chunk, src.data() + (o + 1) * chunk,
                      dst.data() + o * v.extent * v.inner + offset * v.inner);
        offset += p.dim(ax);
    }
    return out;
}

inline Tensor relu(const Tensor &t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0.0f ? t[i] : 0.0f;
    return out;
}

/// Exact GELU: x * Phi(x) = 0.5 * x * (1 + erf(x / sqrt(2))).
/// Not the tanh approximation.
inline Tensor gelu(const Tensor &t) {
    constexpr float inv_sqrt2 = 0.70710678118654752440f;
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = 0.5f * t[i] * (1.0f + std::erf(t[i] * inv_sqrt2));
    return out;
}

/// Inference-mode batch normalization. Channel axis is 0 for [C x H x W]
/// inputs and the last axis otherwise.
inline std::size_t batchnorm_channel_axis(const Shape &shape) { return shape.size() == 3 ? 0 : shape.size() - 1; }

inline Tensor batchnorm(const Tensor &x, const Tensor &gamma, const Tensor &beta, const Tensor &mean,
                        const Tensor &var, float epsilon) {
    const std::size_t ax = batchnorm_channel_axis(x.shape());
    const std::size_t c = x.dim(ax);
    for (const Tensor *p : {&gamma, &beta, &mean, &var})
        if (p->rank() != 1 || p->dim(0) != c)
            throw DimensionError("batchnorm parameter " + to_string(p->shape()) + " does not match " +
                                 std::to_string(c) + " channels");
    std::vector<float> scale(c);
    for (std::size_t i = 0; i < c; ++i) scale[i] = gamma[i] / std::sqrt(var[i] + epsilon);
    const auto v = detail::axis_view(x.shape(), ax);
    Tensor out(x.shape());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t idx = (o * c + ch) * v.inner + i;
                out[idx] = (x[idx] - mean[ch]) * scale[ch] + beta[ch];
            }
    return out;
}

}  // namespace splitquant
