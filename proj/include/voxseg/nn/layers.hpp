#pragma once

#include <string>
#include <vector>

#include "voxseg/common.hpp"
#include "voxseg/nn/ops.hpp"

// Stateful layers: each owns its parameters and gradients, caches what the
// backward pass needs during forward, and accumulates parameter gradients on
// backward. Layers register their parameters under a stable path so the
// checkpoint format and the optimizer can address them by name.

namespace voxseg::nn {

template <typename T>
struct NamedParam {
    std::string path;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

namespace detail {

// He-normal fan-in initialization, the usual choice ahead of (leaky) ReLU.
template <typename T>
void he_init(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<T>(rng.normal(0.0, std_dev));
}

}  // namespace detail

template <typename T>
class Conv3d {
   public:
    Conv3d() = default;
    Conv3d(std::size_t c_in, std::size_t c_out, const ConvSpec& spec, Rng& rng, bool bias = true)
        : spec_(spec),
          w_({c_out, c_in, std::size_t(spec.kernel[0]), std::size_t(spec.kernel[1]),
              std::size_t(spec.kernel[2])}),
          dw_(w_.shape(), T(0)) {
        detail::he_init(w_, c_in * spec.kernel[0] * spec.kernel[1] * spec.kernel[2], rng);
        if (bias) {
            b_ = Tensor<T>({c_out}, T(0));
            db_ = Tensor<T>({c_out}, T(0));
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        return conv3d_forward(x, w_, b_, spec_);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        conv3d_backward_params(x_, dy, spec_, dw_, db_);
        return conv3d_backward_data(dy, w_, x_.shape(), spec_);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", &w_, &dw_});
        if (b_.numel() != 0) out.push_back({prefix + ".b", &b_, &db_});
    }

    Tensor<T>& weights() { return w_; }
    Tensor<T>& bias() { return b_; }
    const ConvSpec& spec() const { return spec_; }

   private:
    ConvSpec spec_;
    Tensor<T> w_, b_, dw_, db_;
    Tensor<T> x_;
};

template <typename T>
class TransposedConv3d {  // kernel 2, stride 2: doubles each spatial dim
   public:
    TransposedConv3d() = default;
    TransposedConv3d(std::size_t c_in, std::size_t c_out, Rng& rng)
        : w_({c_in, c_out, 2, 2, 2}), dw_(w_.shape(), T(0)), b_({c_out}, T(0)),
          db_({c_out}, T(0)) {
        detail::he_init(w_, c_in * 8, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        return tconv3d_k2s2_forward(x, w_, b_);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        tconv3d_k2s2_backward_params(x_, dy, dw_, db_);
        return tconv3d_k2s2_backward_data(dy, w_);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", &w_, &dw_});
        out.push_back({prefix + ".b", &b_, &db_});
    }

   private:
    Tensor<T> w_, dw_, b_, db_;
    Tensor<T> x_;
};

template <typename T>
class InstanceNorm {
   public:
    InstanceNorm() = default;
    explicit InstanceNorm(std::size_t channels)
        : gamma_({channels}, T(1)), beta_({channels}, T(0)), dgamma_({channels}, T(0)),
          dbeta_({channels}, T(0)) {}

    Tensor<T> forward(const Tensor<T>& x) {
        return instance_norm_forward(x, gamma_, beta_, cache_);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        return instance_norm_backward(dy, gamma_, cache_, dgamma_, dbeta_);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
        out.push_back({prefix + ".beta", &beta_, &dbeta_});
    }

   private:
    Tensor<T> gamma_, beta_, dgamma_, dbeta_;
    InstanceNormCache<T> cache_;
};

template <typename T>
class LeakyReLU {
   public:
    explicit LeakyReLU(double slope = 0.01) : slope_(slope) {}

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        return leaky_relu_forward(x, slope_);
    }

    Tensor<T> backward(const Tensor<T>& dy) { return leaky_relu_backward(dy, x_, slope_); }

   private:
    double slope_;
    Tensor<T> x_;
};

template <typename T>
class Sigmoid {
   public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_ = sigmoid_forward(x);
        return y_;
    }

    Tensor<T> backward(const Tensor<T>& dy) { return sigmoid_backward(dy, y_); }

    const Tensor<T>& output() const { return y_; }

   private:
    Tensor<T> y_;
};

template <typename T>
class Linear {
   public:
    Linear() = default;
    Linear(std::size_t c_in, std::size_t c_out, Rng& rng)
        : w_({c_out, c_in}), dw_(w_.shape(), T(0)), b_({c_out}, T(0)), db_({c_out}, T(0)) {
        detail::he_init(w_, c_in, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        return linear_forward(x, w_, b_);
    }

    Tensor<T> backward(const Tensor<T>& dy) { return linear_backward(dy, x_, w_, dw_, db_); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".w", &w_, &dw_});
        out.push_back({prefix + ".b", &b_, &db_});
    }

    Tensor<T>& weights() { return w_; }
    Tensor<T>& bias() { return b_; }

   private:
    Tensor<T> w_, dw_, b_, db_;
    Tensor<T> x_;
};

// conv(3x3x3) -> IN -> LeakyReLU -> conv(3x3x3) -> IN, added onto a residual
// path (identity, or a 1x1x1 projection when the channel count changes).
// No activation after the addition, so zeroed conv weights make the block an
// exact identity on matching channels.
template <typename T>
class SkipBlock {
   public:
    SkipBlock() = default;
    SkipBlock(std::size_t c_in, std::size_t c_out, double leaky_slope, Rng& rng)
        : conv1_(c_in, c_out, ConvSpec::same(3), rng),
          in1_(c_out),
          act_(leaky_slope),
          conv2_(c_out, c_out, ConvSpec::same(3), rng),
          in2_(c_out),
          has_proj_(c_in != c_out) {
        if (has_proj_) proj_ = Conv3d<T>(c_in, c_out, ConvSpec::same(1), rng, /*bias=*/false);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> h = in2_.forward(conv2_.forward(act_.forward(in1_.forward(conv1_.forward(x)))));
        Tensor<T> res = has_proj_ ? proj_.forward(x) : x;
        add_inplace(h, res);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx = conv1_.backward(in1_.backward(act_.backward(conv2_.backward(
            in2_.backward(dy)))));
        if (has_proj_) {
            add_inplace(dx, proj_.backward(dy));
        } else {
            add_inplace(dx, dy);
        }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        conv1_.collect(prefix + ".conv1", out);
        in1_.collect(prefix + ".in1", out);
        conv2_.collect(prefix + ".conv2", out);
        in2_.collect(prefix + ".in2", out);
        if (has_proj_) proj_.collect(prefix + ".proj", out);
    }

    Conv3d<T>& conv1() { return conv1_; }
    Conv3d<T>& conv2() { return conv2_; }

   private:
    Conv3d<T> conv1_;
    InstanceNorm<T> in1_;
    LeakyReLU<T> act_{0.01};
    Conv3d<T> conv2_;
    InstanceNorm<T> in2_;
    bool has_proj_ = false;
    Conv3d<T> proj_;
};

// Spatial gate for low-level features. Three branches of paired factorized
// convolutions — (1,K,K)+(K,1,1), (K,1,K)+(1,K,1), (K,K,1)+(1,1,K) — each
// producing a single-channel map; their sum through a sigmoid gates every
// channel of the input at each voxel.
template <typename T>
class SpatialAttention {
   public:
    SpatialAttention() = default;
    SpatialAttention(std::size_t channels, int k, Rng& rng) {
        if (k % 2 == 0)
            throw ConfigError("spatial attention: kernel " + std::to_string(k) +
                              " must be odd so padding can preserve shape");
        const int h = (k - 1) / 2;
        auto spec = [&](int k0, int k1, int k2) {
            ConvSpec s;
            s.kernel = {k0, k1, k2};
            s.pad = {k0 == 1 ? 0 : h, k1 == 1 ? 0 : h, k2 == 1 ? 0 : h};
            return s;
        };
        a_[0] = Conv3d<T>(channels, 1, spec(1, k, k), rng);
        b_[0] = Conv3d<T>(1, 1, spec(k, 1, 1), rng);
        a_[1] = Conv3d<T>(channels, 1, spec(k, 1, k), rng);
        b_[1] = Conv3d<T>(1, 1, spec(1, k, 1), rng);
        a_[2] = Conv3d<T>(channels, 1, spec(k, k, 1), rng);
        b_[2] = Conv3d<T>(1, 1, spec(1, 1, k), rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        Tensor<T> sum = b_[0].forward(a_[0].forward(x));
        add_inplace(sum, b_[1].forward(a_[1].forward(x)));
        add_inplace(sum, b_[2].forward(a_[2].forward(x)));
        gate_ = sig_.forward(sum);
        return gate_spatial_forward(x, gate_);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx, dgate;
        gate_spatial_backward(dy, x_, gate_, dx, dgate);
        Tensor<T> dsum = sig_.backward(dgate);
        for (int i = 0; i < 3; ++i) add_inplace(dx, a_[i].backward(b_[i].backward(dsum)));
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        static const char* names[3] = {"xy", "xz", "yz"};
        for (int i = 0; i < 3; ++i) {
            a_[i].collect(prefix + ".branch_" + names[i] + ".a", out);
            b_[i].collect(prefix + ".branch_" + names[i] + ".b", out);
        }
    }

    // Accessors used by tests to force the gate via weight surgery.
    Conv3d<T>& branch_a(int i) { return a_[i]; }
    Conv3d<T>& branch_b(int i) { return b_[i]; }
    const Tensor<T>& last_gate() const { return gate_; }

   private:
    Conv3d<T> a_[3], b_[3];
    Sigmoid<T> sig_;
    Tensor<T> x_, gate_;
};

// Channel gate for high-level features: global average pool, a two-layer
// bottleneck MLP (reduction r) with ReLU, sigmoid, then a per-channel
// broadcast multiply.
template <typename T>
class ChannelAttention {
   public:
    ChannelAttention() = default;
    ChannelAttention(std::size_t channels, std::size_t reduction, Rng& rng) {
        if (reduction == 0) throw ConfigError("channel attention: reduction must be positive");
        if (channels < reduction)
            throw ConfigError("channel attention: " + std::to_string(channels) +
                              " channels is fewer than reduction ratio " +
                              std::to_string(reduction));
        fc1_ = Linear<T>(channels, channels / reduction, rng);
        fc2_ = Linear<T>(channels / reduction, channels, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        pooled_shape_ = x.shape();
        Tensor<T> p = global_avg_pool_forward(x);
        mid_in_ = fc1_.forward(p);
        Tensor<T> mid = relu_forward(mid_in_);
        gate_ = sig_.forward(fc2_.forward(mid));
        return gate_channel_forward(x, gate_);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx, dgate;
        gate_channel_backward(dy, x_, gate_, dx, dgate);
        Tensor<T> dmid = fc2_.backward(sig_.backward(dgate));
        for (std::size_t i = 0; i < dmid.numel(); ++i)
            if (mid_in_[i] <= T(0)) dmid[i] = T(0);
        Tensor<T> dp = fc1_.backward(dmid);
        add_inplace(dx, global_avg_pool_backward(dp, pooled_shape_));
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        fc1_.collect(prefix + ".fc1", out);
        fc2_.collect(prefix + ".fc2", out);
    }

    Linear<T>& fc1() { return fc1_; }
    Linear<T>& fc2() { return fc2_; }
    const Tensor<T>& last_gate() const { return gate_; }

   private:
    static Tensor<T> relu_forward(const Tensor<T>& x) {
        Tensor<T> y(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        return y;
    }

    Linear<T> fc1_, fc2_;
    Sigmoid<T> sig_;
    Tensor<T> x_, mid_in_, gate_;
    std::vector<std::size_t> pooled_shape_;
};

// Multi-scale context block: parallel 3x3x3 dilated convolutions (one branch
// per rate, each with in_channels / num_rates output channels), concatenated,
// fused back to in_channels by a 1x1x1 convolution, then channel attention.
// Deliberately norm-free so each branch's receptive field stays local to its
// dilation rate.
template <typename T>
class AtrousBlock {
   public:
    AtrousBlock() = default;
    AtrousBlock(std::size_t channels, const std::vector<int>& rates, std::size_t ca_reduction,
                double /*leaky_slope*/, Rng& rng) {
        if (rates.empty()) throw ConfigError("atrous block: need at least one dilation rate");
        if (channels % rates.size() != 0)
            throw ConfigError("atrous block: channels " + std::to_string(channels) +
                              " not divisible by " + std::to_string(rates.size()) + " rates");
        const std::size_t branch_ch = channels / rates.size();
        for (int r : rates) {
            if (r <= 0) throw ConfigError("atrous block: dilation rates must be positive");
            branches_.emplace_back(channels, branch_ch, ConvSpec::same(3, r), rng);
        }
        branch_channels_.assign(rates.size(), branch_ch);
        fuse_ = Conv3d<T>(channels, channels, ConvSpec::same(1), rng);
        ca_ = ChannelAttention<T>(channels, ca_reduction, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        std::vector<Tensor<T>> outs;
        outs.reserve(branches_.size());
        for (auto& br : branches_) outs.push_back(br.forward(x));
        std::vector<const Tensor<T>*> ptrs;
        for (const auto& o : outs) ptrs.push_back(&o);
        return ca_.forward(fuse_.forward(concat_channels(ptrs)));
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dcat = fuse_.backward(ca_.backward(dy));
        std::vector<Tensor<T>> parts = split_channels(dcat, branch_channels_);
        Tensor<T> dx = branches_[0].backward(parts[0]);
        for (std::size_t i = 1; i < branches_.size(); ++i)
            add_inplace(dx, branches_[i].backward(parts[i]));
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        for (std::size_t i = 0; i < branches_.size(); ++i)
            branches_[i].collect(prefix + ".branch" + std::to_string(i), out);
        fuse_.collect(prefix + ".fuse", out);
        ca_.collect(prefix + ".ca", out);
    }

    ChannelAttention<T>& channel_attention() { return ca_; }

   private:
    std::vector<Conv3d<T>> branches_;
    std::vector<std::size_t> branch_channels_;
    Conv3d<T> fuse_;
    ChannelAttention<T> ca_;
};

// Stride-2 downsampling between encoder stages: conv(2x2x2, stride 2) + IN +
// LeakyReLU.
template <typename T>
class Downsample {
   public:
    Downsample() = default;
    Downsample(std::size_t c_in, std::size_t c_out, double leaky_slope, Rng& rng)
        : conv_(c_in, c_out, ConvSpec::down2(), rng), in_(c_out), act_(leaky_slope) {}

    Tensor<T> forward(const Tensor<T>& x) {
        return act_.forward(in_.forward(conv_.forward(x)));
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        return conv_.backward(in_.backward(act_.backward(dy)));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        conv_.collect(prefix + ".conv", out);
        in_.collect(prefix + ".in", out);
    }

   private:
    Conv3d<T> conv_;
    InstanceNorm<T> in_;
    LeakyReLU<T> act_{0.01};
};

}  // namespace voxseg::nn
