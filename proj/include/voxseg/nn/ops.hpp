#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "voxseg/tensor.hpp"

// Low-level differentiable operations on (N, C, X, Y, Z) activation tensors.
// Convolutions are im2col + GEMM; each op comes as forward / backward pair(s)
// with gradients accumulated (+=) into parameter grads and returned fresh for
// data grads. Everything is single-threaded and deterministic.

namespace voxseg::nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvSpec {
    std::array<int, 3> kernel{3, 3, 3};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> pad{0, 0, 0};
    std::array<int, 3> dilation{1, 1, 1};

    static ConvSpec same(int k, int dilation_rate = 1) {
        if (k % 2 == 0)
            throw ConfigError("ConvSpec::same: kernel " + std::to_string(k) +
                              " must be odd to preserve shape");
        ConvSpec s;
        s.kernel = {k, k, k};
        s.dilation = {dilation_rate, dilation_rate, dilation_rate};
        const int p = dilation_rate * (k - 1) / 2;
        s.pad = {p, p, p};
        return s;
    }

    static ConvSpec down2() {  // kernel-2 stride-2, halves each spatial dim
        ConvSpec s;
        s.kernel = {2, 2, 2};
        s.stride = {2, 2, 2};
        return s;
    }

    int out_dim(int in, int axis) const {
        const int eff = dilation[axis] * (kernel[axis] - 1) + 1;
        const int num = in + 2 * pad[axis] - eff;
        if (num < 0 || num % stride[axis] != 0 || in <= 0)
            throw ShapeError("conv: input extent " + std::to_string(in) +
                             " incompatible with kernel/stride/pad on axis " +
                             std::to_string(axis));
        return num / stride[axis] + 1;
    }
};

namespace detail {

template <typename T>
std::vector<T>& scratch_buffer() {
    static thread_local std::vector<T> buf;
    return buf;
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                     const char* what) {
    if (x.rank() != 5)
        throw ShapeError(std::string(what) + ": input must be (N,C,X,Y,Z), got " +
                         x.shape_string());
    if (w.rank() != 5)
        throw ShapeError(std::string(what) + ": weights must be (Cout,Cin,kx,ky,kz), got " +
                         w.shape_string());
    if (x.dim(1) != w.dim(1))
        throw ShapeError(std::string(what) + ": input channels " + std::to_string(x.dim(1)) +
                         " != weight channels " + std::to_string(w.dim(1)));
    if (b.numel() != 0 && b.numel() != w.dim(0))
        throw ShapeError(std::string(what) + ": bias size " + std::to_string(b.numel()) +
                         " != out channels " + std::to_string(w.dim(0)));
}

// Gather input patches: col is (Cin*kx*ky*kz) x (ox*oy*oz), row-major.
template <typename T>
void im2col(const T* x, int c_in, const std::array<int, 3>& in_d,
            const std::array<int, 3>& out_d, const ConvSpec& sp, T* col) {
    const std::size_t s_cols = std::size_t(out_d[0]) * out_d[1] * out_d[2];
    std::size_t r = 0;
    for (int c = 0; c < c_in; ++c)
        for (int k0 = 0; k0 < sp.kernel[0]; ++k0)
            for (int k1 = 0; k1 < sp.kernel[1]; ++k1)
                for (int k2 = 0; k2 < sp.kernel[2]; ++k2, ++r) {
                    T* dst = col + r * s_cols;
                    const T* src_c = x + std::size_t(c) * in_d[0] * in_d[1] * in_d[2];
                    for (int o0 = 0; o0 < out_d[0]; ++o0) {
                        const int i0 = o0 * sp.stride[0] - sp.pad[0] + k0 * sp.dilation[0];
                        for (int o1 = 0; o1 < out_d[1]; ++o1) {
                            const int i1 = o1 * sp.stride[1] - sp.pad[1] + k1 * sp.dilation[1];
                            const bool row_ok = i0 >= 0 && i0 < in_d[0] && i1 >= 0 && i1 < in_d[1];
                            for (int o2 = 0; o2 < out_d[2]; ++o2, ++dst) {
                                const int i2 = o2 * sp.stride[2] - sp.pad[2] + k2 * sp.dilation[2];
                                *dst = row_ok && i2 >= 0 && i2 < in_d[2]
                                           ? src_c[(std::size_t(i0) * in_d[1] + i1) * in_d[2] + i2]
                                           : T(0);
                            }
                        }
                    }
                }
}

// Scatter-add the column gradient back onto the input gradient.
template <typename T>
void col2im_add(const T* col, int c_in, const std::array<int, 3>& in_d,
                const std::array<int, 3>& out_d, const ConvSpec& sp, T* dx) {
    const std::size_t s_cols = std::size_t(out_d[0]) * out_d[1] * out_d[2];
    std::size_t r = 0;
    for (int c = 0; c < c_in; ++c)
        for (int k0 = 0; k0 < sp.kernel[0]; ++k0)
            for (int k1 = 0; k1 < sp.kernel[1]; ++k1)
                for (int k2 = 0; k2 < sp.kernel[2]; ++k2, ++r) {
                    const T* src = col + r * s_cols;
                    T* dst_c = dx + std::size_t(c) * in_d[0] * in_d[1] * in_d[2];
                    for (int o0 = 0; o0 < out_d[0]; ++o0) {
                        const int i0 = o0 * sp.stride[0] - sp.pad[0] + k0 * sp.dilation[0];
                        for (int o1 = 0; o1 < out_d[1]; ++o1) {
                            const int i1 = o1 * sp.stride[1] - sp.pad[1] + k1 * sp.dilation[1];
                            const bool row_ok = i0 >= 0 && i0 < in_d[0] && i1 >= 0 && i1 < in_d[1];
                            for (int o2 = 0; o2 < out_d[2]; ++o2, ++src) {
                                const int i2 = o2 * sp.stride[2] - sp.pad[2] + k2 * sp.dilation[2];
                                if (row_ok && i2 >= 0 && i2 < in_d[2])
                                    dst_c[(std::size_t(i0) * in_d[1] + i1) * in_d[2] + i2] += *src;
                            }
                        }
                    }
                }
}

template <typename T>
std::array<int, 3> spatial_dims(const Tensor<T>& x) {
    return {static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)), static_cast<int>(x.dim(4))};
}

}  // namespace detail

// y = conv(x, w) + b. x: (N,Cin,X,Y,Z), w: (Cout,Cin,kx,ky,kz), b: (Cout) or
// empty for no bias.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& sp) {
    detail::check_conv_args(x, w, b, "conv3d_forward");
    const auto in_d = detail::spatial_dims(x);
    const std::array<int, 3> out_d{sp.out_dim(in_d[0], 0), sp.out_dim(in_d[1], 1),
                                   sp.out_dim(in_d[2], 2)};
    const std::size_t n = x.dim(0), c_in = x.dim(1), c_out = w.dim(0);
    const std::size_t rows = c_in * sp.kernel[0] * sp.kernel[1] * sp.kernel[2];
    const std::size_t cols = std::size_t(out_d[0]) * out_d[1] * out_d[2];

    Tensor<T> y({n, c_out, std::size_t(out_d[0]), std::size_t(out_d[1]), std::size_t(out_d[2])});
    auto& col = detail::scratch_buffer<T>();
    if (col.size() < rows * cols) col.resize(rows * cols);

    ConstMatMap<T> w_m(w.data(), c_out, rows);
    const std::size_t x_stride = c_in * in_d[0] * in_d[1] * in_d[2];
    const std::size_t y_stride = c_out * cols;
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(x.data() + s * x_stride, static_cast<int>(c_in), in_d, out_d, sp,
                       col.data());
        ConstMatMap<T> col_m(col.data(), rows, cols);
        MatMap<T> y_m(y.data() + s * y_stride, c_out, cols);
        y_m.noalias() = w_m * col_m;
        if (b.numel() != 0)
            for (std::size_t c = 0; c < c_out; ++c) y_m.row(c).array() += b[c];
    }
    return y;
}

// Gradient w.r.t. the input: dx = conv_transpose(dy, w).
template <typename T>
Tensor<T> conv3d_backward_data(const Tensor<T>& dy, const Tensor<T>& w,
                               const std::vector<std::size_t>& x_shape, const ConvSpec& sp) {
    if (x_shape.size() != 5)
        throw ShapeError("conv3d_backward_data: x_shape must have rank 5");
    Tensor<T> dx(x_shape);
    dx.zero();
    const std::array<int, 3> in_d{static_cast<int>(x_shape[2]), static_cast<int>(x_shape[3]),
                                  static_cast<int>(x_shape[4])};
    const auto out_d = detail::spatial_dims(dy);
    const std::size_t n = dy.dim(0), c_out = w.dim(0), c_in = w.dim(1);
    const std::size_t rows = c_in * sp.kernel[0] * sp.kernel[1] * sp.kernel[2];
    const std::size_t cols = std::size_t(out_d[0]) * out_d[1] * out_d[2];
    if (dy.dim(1) != c_out)
        throw ShapeError("conv3d_backward_data: dy channels " + std::to_string(dy.dim(1)) +
                         " != weight out channels " + std::to_string(c_out));
    if (x_shape[1] != c_in)
        throw ShapeError("conv3d_backward_data: x channels " + std::to_string(x_shape[1]) +
                         " != weight in channels " + std::to_string(c_in));

    auto& col = detail::scratch_buffer<T>();
    if (col.size() < rows * cols) col.resize(rows * cols);
    ConstMatMap<T> w_m(w.data(), c_out, rows);
    const std::size_t dx_stride = c_in * in_d[0] * in_d[1] * in_d[2];
    const std::size_t dy_stride = c_out * cols;
    for (std::size_t s = 0; s < n; ++s) {
        ConstMatMap<T> dy_m(dy.data() + s * dy_stride, c_out, cols);
        MatMap<T> col_m(col.data(), rows, cols);
        col_m.noalias() = w_m.transpose() * dy_m;
        detail::col2im_add(col.data(), static_cast<int>(c_in), in_d, out_d, sp,
                           dx.data() + s * dx_stride);
    }
    return dx;
}

// Accumulate parameter gradients: dw += dy * im2col(x)^T, db += row sums.
template <typename T>
void conv3d_backward_params(const Tensor<T>& x, const Tensor<T>& dy, const ConvSpec& sp,
                            Tensor<T>& dw, Tensor<T>& db) {
    const auto in_d = detail::spatial_dims(x);
    const auto out_d = detail::spatial_dims(dy);
    const std::size_t n = x.dim(0), c_in = x.dim(1), c_out = dy.dim(1);
    const std::size_t rows = c_in * sp.kernel[0] * sp.kernel[1] * sp.kernel[2];
    const std::size_t cols = std::size_t(out_d[0]) * out_d[1] * out_d[2];
    if (dw.numel() != c_out * rows)
        throw ShapeError("conv3d_backward_params: dw shape " + dw.shape_string() +
                         " inconsistent with conv geometry");

    auto& col = detail::scratch_buffer<T>();
    if (col.size() < rows * cols) col.resize(rows * cols);
    MatMap<T> dw_m(dw.data(), c_out, rows);
    const std::size_t x_stride = c_in * in_d[0] * in_d[1] * in_d[2];
    const std::size_t dy_stride = c_out * cols;
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(x.data() + s * x_stride, static_cast<int>(c_in), in_d, out_d, sp,
                       col.data());
        ConstMatMap<T> col_m(col.data(), rows, cols);
        ConstMatMap<T> dy_m(dy.data() + s * dy_stride, c_out, cols);
        dw_m.noalias() += dy_m * col_m.transpose();
        // fixed-order scalar sum: a vectorized reduction would split scalar
        // head and packets by heap alignment, making the rounding (and thus
        // checkpoints) vary between otherwise identical runs
        if (db.numel() != 0)
            for (std::size_t c = 0; c < c_out; ++c) {
                const T* row = dy.data() + s * dy_stride + c * cols;
                T acc = T(0);
                for (std::size_t i = 0; i < cols; ++i) acc += row[i];
                db[c] += acc;
            }
    }
}

// Transposed convolution with kernel 2, stride 2 (doubles each spatial dim),
// expressed through the ordinary convolution V with the same geometry:
// tconv.forward == V.backward_data, tconv.backward_data == V.forward, and
// tconv's weight gradient is V's with the roles of x and dy swapped.
// Weight shape follows the transposed convention: (Cin, Cout, 2, 2, 2).
template <typename T>
Tensor<T> tconv3d_k2s2_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 5 || w.rank() != 5)
        throw ShapeError("tconv3d_k2s2_forward: need rank-5 input and weights");
    if (x.dim(1) != w.dim(0))
        throw ShapeError("tconv3d_k2s2_forward: input channels " + std::to_string(x.dim(1)) +
                         " != weight in channels " + std::to_string(w.dim(0)));
    const std::size_t c_out = w.dim(1);
    const std::vector<std::size_t> y_shape{x.dim(0), c_out, x.dim(2) * 2, x.dim(3) * 2,
                                           x.dim(4) * 2};
    Tensor<T> y = conv3d_backward_data(x, w, y_shape, ConvSpec::down2());
    if (b.numel() != 0) {
        if (b.numel() != c_out)
            throw ShapeError("tconv3d_k2s2_forward: bias size " + std::to_string(b.numel()) +
                             " != out channels " + std::to_string(c_out));
        const std::size_t sp_n = y.dim(2) * y.dim(3) * y.dim(4);
        for (std::size_t s = 0; s < y.dim(0); ++s)
            for (std::size_t c = 0; c < c_out; ++c) {
                T* p = y.data() + (s * c_out + c) * sp_n;
                for (std::size_t i = 0; i < sp_n; ++i) p[i] += b[c];
            }
    }
    return y;
}

template <typename T>
Tensor<T> tconv3d_k2s2_backward_data(const Tensor<T>& dy, const Tensor<T>& w) {
    return conv3d_forward(dy, w, Tensor<T>(), ConvSpec::down2());
}

template <typename T>
void tconv3d_k2s2_backward_params(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw,
                                  Tensor<T>& db) {
    Tensor<T> unused_db;
    conv3d_backward_params(dy, x, ConvSpec::down2(), dw, unused_db);
    if (db.numel() != 0) {
        const std::size_t c_out = dy.dim(1);
        const std::size_t sp_n = dy.dim(2) * dy.dim(3) * dy.dim(4);
        for (std::size_t s = 0; s < dy.dim(0); ++s)
            for (std::size_t c = 0; c < c_out; ++c) {
                const T* p = dy.data() + (s * c_out + c) * sp_n;
                T acc = T(0);
                for (std::size_t i = 0; i < sp_n; ++i) acc += p[i];
                db[c] += acc;
            }
    }
}

// Instance normalization over the spatial extent of each (sample, channel)
// slice, with per-channel affine parameters gamma/beta.
template <typename T>
struct InstanceNormCache {
    Tensor<T> x_hat;           // normalized activations
    std::vector<T> inv_sigma;  // 1/sqrt(var + eps) per (n, c)
};

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                InstanceNormCache<T>& cache, double eps = 1e-5) {
    if (x.rank() != 5) throw ShapeError("instance_norm: input must be rank 5");
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    if (gamma.numel() != c_n || beta.numel() != c_n)
        throw ShapeError("instance_norm: affine params sized " + std::to_string(gamma.numel()) +
                         " for " + std::to_string(c_n) + " channels");
    Tensor<T> y(x.shape());
    cache.x_hat = Tensor<T>(x.shape());
    cache.inv_sigma.assign(n * c_n, T(0));
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* xp = x.data() + (s * c_n + c) * sp;
            T* hp = cache.x_hat.data() + (s * c_n + c) * sp;
            T* yp = y.data() + (s * c_n + c) * sp;
            double mean = 0.0;
            for (std::size_t i = 0; i < sp; ++i) mean += xp[i];
            mean /= static_cast<double>(sp);
            double var = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                const double d = xp[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(sp);
            const T inv_sigma = static_cast<T>(1.0 / std::sqrt(var + eps));
            cache.inv_sigma[s * c_n + c] = inv_sigma;
            for (std::size_t i = 0; i < sp; ++i) {
                hp[i] = (xp[i] - static_cast<T>(mean)) * inv_sigma;
                yp[i] = gamma[c] * hp[i] + beta[c];
            }
        }
    return y;
}

template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                                 const InstanceNormCache<T>& cache, Tensor<T>& dgamma,
                                 Tensor<T>& dbeta) {
    const std::size_t n = dy.dim(0), c_n = dy.dim(1), sp = dy.dim(2) * dy.dim(3) * dy.dim(4);
    Tensor<T> dx(dy.shape());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* dyp = dy.data() + (s * c_n + c) * sp;
            const T* hp = cache.x_hat.data() + (s * c_n + c) * sp;
            T* dxp = dx.data() + (s * c_n + c) * sp;
            double sum_dy = 0.0, sum_dy_h = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                sum_dy += dyp[i];
                sum_dy_h += double(dyp[i]) * hp[i];
                dgamma[c] += dyp[i] * hp[i];
                dbeta[c] += dyp[i];
            }
            const double mean_dy = sum_dy / static_cast<double>(sp);
            const double mean_dy_h = sum_dy_h / static_cast<double>(sp);
            const T k = gamma[c] * cache.inv_sigma[s * c_n + c];
            for (std::size_t i = 0; i < sp; ++i)
                dxp[i] = k * static_cast<T>(dyp[i] - mean_dy - hp[i] * mean_dy_h);
        }
    return dx;
}

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, double slope) {
    Tensor<T> y(x.shape());
    const T a = static_cast<T>(slope);
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : a * x[i];
    return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& dy, const Tensor<T>& x, double slope) {
    require_same_shape(dy, x, "leaky_relu_backward");
    Tensor<T> dx(x.shape());
    const T a = static_cast<T>(slope);
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T(0) ? dy[i] : a * dy[i];
    return dx;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const Tensor<T>& y) {
    require_same_shape(dy, y, "sigmoid_backward");
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    return dx;
}

// (N, C, X, Y, Z) -> (N, C): mean over the spatial extent.
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
    if (x.rank() != 5) throw ShapeError("global_avg_pool: input must be rank 5");
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    Tensor<T> y({n, c_n});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* p = x.data() + (s * c_n + c) * sp;
            double acc = 0.0;
            for (std::size_t i = 0; i < sp; ++i) acc += p[i];
            y[s * c_n + c] = static_cast<T>(acc / static_cast<double>(sp));
        }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const std::vector<std::size_t>& x_shape) {
    Tensor<T> dx(x_shape);
    const std::size_t n = x_shape[0], c_n = x_shape[1], sp = x_shape[2] * x_shape[3] * x_shape[4];
    const T inv = T(1) / static_cast<T>(sp);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            T* p = dx.data() + (s * c_n + c) * sp;
            const T g = dy[s * c_n + c] * inv;
            for (std::size_t i = 0; i < sp; ++i) p[i] = g;
        }
    return dx;
}

// Fully connected: x (N, Cin), w (Cout, Cin), b (Cout) -> (N, Cout).
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2)
        throw ShapeError("linear_forward: need rank-2 input and weights");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear_forward: input features " + std::to_string(x.dim(1)) +
                         " != weight features " + std::to_string(w.dim(1)));
    const std::size_t n = x.dim(0), c_in = x.dim(1), c_out = w.dim(0);
    Tensor<T> y({n, c_out});
    ConstMatMap<T> x_m(x.data(), n, c_in), w_m(w.data(), c_out, c_in);
    MatMap<T> y_m(y.data(), n, c_out);
    y_m.noalias() = x_m * w_m.transpose();
    if (b.numel() != 0)
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t c = 0; c < c_out; ++c) y[s * c_out + c] += b[c];
    return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w,
                          Tensor<T>& dw, Tensor<T>& db) {
    const std::size_t n = x.dim(0), c_in = x.dim(1), c_out = w.dim(0);
    ConstMatMap<T> dy_m(dy.data(), n, c_out), x_m(x.data(), n, c_in), w_m(w.data(), c_out, c_in);
    MatMap<T> dw_m(dw.data(), c_out, c_in);
    dw_m.noalias() += dy_m.transpose() * x_m;
    if (db.numel() != 0)
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t c = 0; c < c_out; ++c) db[c] += dy[s * c_out + c];
    Tensor<T> dx({n, c_in});
    MatMap<T> dx_m(dx.data(), n, c_in);
    dx_m.noalias() = dy_m * w_m;
    return dx;
}

// Spatial gate: y = x ⊙ g with g shaped (N, 1, X, Y, Z) broadcast over
// channels.
template <typename T>
Tensor<T> gate_spatial_forward(const Tensor<T>& x, const Tensor<T>& g) {
    if (g.dim(1) != 1) throw ShapeError("gate_spatial: gate must have 1 channel");
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    if (g.dim(0) != n || g.numel() != n * sp)
        throw ShapeError("gate_spatial: gate shape " + g.shape_string() +
                         " does not match input " + x.shape_string());
    Tensor<T> y(x.shape());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* xp = x.data() + (s * c_n + c) * sp;
            const T* gp = g.data() + s * sp;
            T* yp = y.data() + (s * c_n + c) * sp;
            for (std::size_t i = 0; i < sp; ++i) yp[i] = xp[i] * gp[i];
        }
    return y;
}

template <typename T>
void gate_spatial_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& g,
                           Tensor<T>& dx, Tensor<T>& dg) {
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    dx = Tensor<T>(x.shape());
    dg = Tensor<T>(g.shape());
    dg.zero();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* dyp = dy.data() + (s * c_n + c) * sp;
            const T* xp = x.data() + (s * c_n + c) * sp;
            const T* gp = g.data() + s * sp;
            T* dxp = dx.data() + (s * c_n + c) * sp;
            T* dgp = dg.data() + s * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                dxp[i] = dyp[i] * gp[i];
                dgp[i] += dyp[i] * xp[i];
            }
        }
}

// Channel gate: y = x ⊙ g with g shaped (N, C) broadcast over space.
template <typename T>
Tensor<T> gate_channel_forward(const Tensor<T>& x, const Tensor<T>& g) {
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    if (g.rank() != 2 || g.dim(0) != n || g.dim(1) != c_n)
        throw ShapeError("gate_channel: gate shape " + g.shape_string() +
                         " does not match input " + x.shape_string());
    Tensor<T> y(x.shape());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* xp = x.data() + (s * c_n + c) * sp;
            T* yp = y.data() + (s * c_n + c) * sp;
            const T gv = g[s * c_n + c];
            for (std::size_t i = 0; i < sp; ++i) yp[i] = xp[i] * gv;
        }
    return y;
}

template <typename T>
void gate_channel_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& g,
                           Tensor<T>& dx, Tensor<T>& dg) {
    const std::size_t n = x.dim(0), c_n = x.dim(1), sp = x.dim(2) * x.dim(3) * x.dim(4);
    dx = Tensor<T>(x.shape());
    dg = Tensor<T>({n, c_n});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* dyp = dy.data() + (s * c_n + c) * sp;
            const T* xp = x.data() + (s * c_n + c) * sp;
            T* dxp = dx.data() + (s * c_n + c) * sp;
            const T gv = g[s * c_n + c];
            double acc = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                dxp[i] = dyp[i] * gv;
                acc += double(dyp[i]) * xp[i];
            }
            dg[s * c_n + c] = static_cast<T>(acc);
        }
}

// Concatenate along the channel axis; all inputs share (N, ·, X, Y, Z).
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Tensor<T>& first = *xs.front();
    std::size_t c_total = 0;
    for (const Tensor<T>* x : xs) {
        if (x->rank() != 5 || x->dim(0) != first.dim(0) || x->dim(2) != first.dim(2) ||
            x->dim(3) != first.dim(3) || x->dim(4) != first.dim(4))
            throw ShapeError("concat_channels: incompatible input " + x->shape_string() +
                             " vs " + first.shape_string());
        c_total += x->dim(1);
    }
    const std::size_t n = first.dim(0), sp = first.dim(2) * first.dim(3) * first.dim(4);
    Tensor<T> y({n, c_total, first.dim(2), first.dim(3), first.dim(4)});
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t c_off = 0;
        for (const Tensor<T>* x : xs) {
            const std::size_t c_n = x->dim(1);
            std::copy_n(x->data() + s * c_n * sp, c_n * sp,
                        y.data() + (s * c_total + c_off) * sp);
            c_off += c_n;
        }
    }
    return y;
}

// Split a channel-axis gradient back into per-input gradients.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& dy,
                                      const std::vector<std::size_t>& channel_counts) {
    std::size_t c_total = 0;
    for (std::size_t c : channel_counts) c_total += c;
    if (dy.dim(1) != c_total)
        throw ShapeError("split_channels: channel counts sum to " + std::to_string(c_total) +
                         " but gradient has " + std::to_string(dy.dim(1)));
    const std::size_t n = dy.dim(0), sp = dy.dim(2) * dy.dim(3) * dy.dim(4);
    std::vector<Tensor<T>> out;
    out.reserve(channel_counts.size());
    std::size_t c_off = 0;
    for (std::size_t c_n : channel_counts) {
        Tensor<T> part({n, c_n, dy.dim(2), dy.dim(3), dy.dim(4)});
        for (std::size_t s = 0; s < n; ++s)
            std::copy_n(dy.data() + (s * c_total + c_off) * sp, c_n * sp,
                        part.data() + s * c_n * sp);
        out.push_back(std::move(part));
        c_off += c_n;
    }
    return out;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
    require_same_shape(acc, x, "add_inplace");
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += x[i];
}

}  // namespace voxseg::nn
