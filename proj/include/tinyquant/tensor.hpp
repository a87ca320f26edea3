#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tinyquant/errors.hpp"

namespace tinyquant {

enum class ElemKind { Float32, Int8, Int32 };

// NHWC shape. Activations use (batch, height, width, channels); weight
// tensors reuse the same container as (kh, kw, in_channels, out_channels)
// and dense weights as (1, 1, inputs, units).
struct Shape4 {
    int n = 0, h = 0, w = 0, c = 0;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * h * w * c;
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
               std::to_string(c);
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, T fill_value = T{})
        : shape_(shape), data_(static_cast<std::size_t>(check_shape(shape)), fill_value) {}
    Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != check_shape(shape_)) {
            throw Error(ErrorKind::ShapeMismatch,
                        "tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_.str());
        }
    }

    const Shape4& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    std::int64_t index(int n, int h, int w, int c) const {
        return ((static_cast<std::int64_t>(n) * shape_.h + h) * shape_.w + w) * shape_.c + c;
    }
    T& at(int n, int h, int w, int c) { return data_[static_cast<std::size_t>(index(n, h, w, c))]; }
    const T& at(int n, int h, int w, int c) const {
        return data_[static_cast<std::size_t>(index(n, h, w, c))];
    }
    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor&) const = default;

private:
    static std::int64_t check_shape(const Shape4& s) {
        if (s.n < 0 || s.h < 0 || s.w < 0 || s.c < 0) {
            throw Error(ErrorKind::ShapeMismatch, "negative extent in shape " + s.str());
        }
        return s.numel();
    }

    Shape4 shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorI8 = Tensor<std::int8_t>;
using TensorI32 = Tensor<std::int32_t>;

// Affine quantization parameters: r = scale * (q - zero_point).
// Per-tensor form has one scale and an arbitrary zero point in [-128, 127];
// the per-channel form (weights only) is symmetric with zero_point = 0 and
// one scale per output channel.
struct QuantParams {
    std::vector<float> scales;
    int zero_point = 0;

    static QuantParams per_tensor(float scale, int zero_point) {
        return QuantParams{{scale}, zero_point};
    }
    static QuantParams per_channel(std::vector<float> scales) {
        return QuantParams{std::move(scales), 0};
    }

    bool per_channel_form() const { return scales.size() > 1; }
    float scale() const { return scales[0]; }

    void validate() const;
};

// Half-away-from-zero rounding, the one rounding rule used when mapping
// reals onto the int8 grid.
inline std::int64_t round_half_away(double v) { return std::llround(v); }

inline std::int8_t clamp_i8(std::int64_t v) {
    return static_cast<std::int8_t>(std::clamp<std::int64_t>(v, -128, 127));
}

template <typename T>
std::int8_t quantize_value(T real, float scale, int zero_point) {
    return clamp_i8(round_half_away(static_cast<double>(real) / static_cast<double>(scale)) +
                    zero_point);
}

namespace detail {
// Per-channel quantization applies along the last axis (output channels).
void check_quant_layout(const Shape4& shape, const QuantParams& qp);
}  // namespace detail

template <typename T>
TensorI8 quantize_affine(const Tensor<T>& t, const QuantParams& qp) {
    qp.validate();
    detail::check_quant_layout(t.shape(), qp);
    TensorI8 out(t.shape());
    const std::int64_t channels = t.shape().c;
    if (!qp.per_channel_form()) {
        const float s = qp.scale();
        for (std::int64_t i = 0; i < t.size(); ++i) {
            out[i] = quantize_value(t[i], s, qp.zero_point);
        }
    } else {
        for (std::int64_t i = 0; i < t.size(); ++i) {
            out[i] = quantize_value(t[i], qp.scales[static_cast<std::size_t>(i % channels)], 0);
        }
    }
    return out;
}

template <typename T = float>
Tensor<T> dequantize(const TensorI8& t, const QuantParams& qp) {
    qp.validate();
    detail::check_quant_layout(t.shape(), qp);
    Tensor<T> out(t.shape());
    const std::int64_t channels = t.shape().c;
    if (!qp.per_channel_form()) {
        const T s = static_cast<T>(qp.scale());
        for (std::int64_t i = 0; i < t.size(); ++i) {
            out[i] = s * static_cast<T>(t[i] - qp.zero_point);
        }
    } else {
        for (std::int64_t i = 0; i < t.size(); ++i) {
            out[i] = static_cast<T>(qp.scales[static_cast<std::size_t>(i % channels)]) *
                     static_cast<T>(t[i]);
        }
    }
    return out;
}

// A 32x32 input image paired with its binary label (1 = mask, 0 = no mask),
// normalized to [0, 1]. The bridge type between the data pipeline, the
// trainer, and the inference engines.
struct Sample {
    TensorF image;
    int label = 0;
};

}  // namespace tinyquant
