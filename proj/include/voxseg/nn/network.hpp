#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "voxseg/nn/layers.hpp"

// The segmentation network: a five-stage skip-block encoder with spatial
// attention gating the two low-level stages and channel attention gating the
// three high-level stages, a dilated multi-scale block at the bottleneck, and
// a mirrored transposed-convolution decoder that consumes the attention-gated
// features as skip connections. The final 1x1x1 convolution emits per-class
// logits at input resolution.

namespace voxseg::nn {

struct NetworkConfig {
    int in_channels = 2;   // T1 + T2
    int num_classes = 4;   // BG, CSF, GM, WM
    std::array<int, 5> encoder_channels{32, 64, 128, 256, 256};
    int sa_kernel = 3;                      // factorized-conv kernel K
    std::vector<int> atrous_rates{1, 2, 3, 4};
    int ca_reduction = 4;                   // squeeze ratio r of channel attention
    double leaky_slope = 0.01;
    bool gated_skips = true;      // ablation: route raw encoder features instead
    bool atrous_all_high = false; // also place dilated blocks on stage-3/4 skips

    void validate() const {
        if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
        if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
        for (int c : encoder_channels)
            if (c < 1) throw ConfigError("network: encoder channels must be positive");
        if (sa_kernel < 1 || sa_kernel % 2 == 0)
            throw ConfigError("network: sa_kernel must be odd and positive, got " +
                              std::to_string(sa_kernel));
        if (atrous_rates.empty())
            throw ConfigError("network: atrous_rates must be nonempty");
        for (std::size_t i = 0; i < atrous_rates.size(); ++i) {
            if (atrous_rates[i] <= 0)
                throw ConfigError("network: atrous rates must be positive");
            for (std::size_t j = i + 1; j < atrous_rates.size(); ++j)
                if (atrous_rates[i] == atrous_rates[j])
                    throw ConfigError("network: atrous rates must be distinct");
        }
        if (ca_reduction < 1) throw ConfigError("network: ca_reduction must be >= 1");
        auto check_ca = [&](int ch, const char* where) {
            if (ch < ca_reduction)
                throw ConfigError(std::string("network: ") + where + " has " +
                                  std::to_string(ch) + " channels, fewer than ca_reduction " +
                                  std::to_string(ca_reduction));
        };
        check_ca(encoder_channels[2], "stage 3");
        check_ca(encoder_channels[3], "stage 4");
        check_ca(encoder_channels[4], "stage 5");
        auto check_atrous = [&](int ch, const char* where) {
            if (ch % static_cast<int>(atrous_rates.size()) != 0)
                throw ConfigError(std::string("network: ") + where + " channel count " +
                                  std::to_string(ch) + " not divisible by " +
                                  std::to_string(atrous_rates.size()) + " atrous rates");
        };
        check_atrous(encoder_channels[4], "bottleneck");
        if (atrous_all_high) {
            check_atrous(encoder_channels[2], "stage 3");
            check_atrous(encoder_channels[3], "stage 4");
        }
        if (leaky_slope < 0.0) throw ConfigError("network: leaky_slope must be >= 0");
    }
};

template <typename T>
class DilatedAttentionNet {
   public:
    explicit DilatedAttentionNet(const NetworkConfig& cfg, std::uint64_t seed = 1)
        : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const auto& ch = cfg_.encoder_channels;

        // Construction order is fixed: it defines both the RNG consumption
        // sequence (reproducible weights) and the parameter path listing.
        stage1_ = SkipBlock<T>(cfg_.in_channels, ch[0], cfg_.leaky_slope, rng);
        down1_ = Downsample<T>(ch[0], ch[1], cfg_.leaky_slope, rng);
        stage2_ = SkipBlock<T>(ch[1], ch[1], cfg_.leaky_slope, rng);
        down2_ = Downsample<T>(ch[1], ch[2], cfg_.leaky_slope, rng);
        stage3_ = SkipBlock<T>(ch[2], ch[2], cfg_.leaky_slope, rng);
        down3_ = Downsample<T>(ch[2], ch[3], cfg_.leaky_slope, rng);
        stage4_ = SkipBlock<T>(ch[3], ch[3], cfg_.leaky_slope, rng);
        down4_ = Downsample<T>(ch[3], ch[4], cfg_.leaky_slope, rng);
        stage5_ = SkipBlock<T>(ch[4], ch[4], cfg_.leaky_slope, rng);

        sa1_ = SpatialAttention<T>(ch[0], cfg_.sa_kernel, rng);
        sa2_ = SpatialAttention<T>(ch[1], cfg_.sa_kernel, rng);
        ca3_ = ChannelAttention<T>(ch[2], cfg_.ca_reduction, rng);
        ca4_ = ChannelAttention<T>(ch[3], cfg_.ca_reduction, rng);
        ca5_ = ChannelAttention<T>(ch[4], cfg_.ca_reduction, rng);
        if (cfg_.atrous_all_high) {
            atrous3_ = AtrousBlock<T>(ch[2], cfg_.atrous_rates, cfg_.ca_reduction,
                                      cfg_.leaky_slope, rng);
            atrous4_ = AtrousBlock<T>(ch[3], cfg_.atrous_rates, cfg_.ca_reduction,
                                      cfg_.leaky_slope, rng);
        }
        atrous5_ = AtrousBlock<T>(ch[4], cfg_.atrous_rates, cfg_.ca_reduction, cfg_.leaky_slope,
                                  rng);

        up4_ = TransposedConv3d<T>(ch[4], ch[3], rng);
        dec4_ = SkipBlock<T>(2 * ch[3], ch[3], cfg_.leaky_slope, rng);
        up3_ = TransposedConv3d<T>(ch[3], ch[2], rng);
        dec3_ = SkipBlock<T>(2 * ch[2], ch[2], cfg_.leaky_slope, rng);
        up2_ = TransposedConv3d<T>(ch[2], ch[1], rng);
        dec2_ = SkipBlock<T>(2 * ch[1], ch[1], cfg_.leaky_slope, rng);
        up1_ = TransposedConv3d<T>(ch[1], ch[0], rng);
        dec1_ = SkipBlock<T>(2 * ch[0], ch[0], cfg_.leaky_slope, rng);
        classifier_ = Conv3d<T>(ch[0], cfg_.num_classes, ConvSpec::same(1), rng);
    }

    const NetworkConfig& config() const { return cfg_; }

    // x: (N, in_channels, X, Y, Z) with every spatial dim divisible by 16.
    // Returns logits (N, num_classes, X, Y, Z).
    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);

        Tensor<T> f1 = stage1_.forward(x);
        Tensor<T> f2 = stage2_.forward(down1_.forward(f1));
        Tensor<T> f3 = stage3_.forward(down2_.forward(f2));
        Tensor<T> f4 = stage4_.forward(down3_.forward(f3));
        Tensor<T> f5 = stage5_.forward(down4_.forward(f4));

        Tensor<T> s1 = cfg_.gated_skips ? sa1_.forward(f1) : f1;
        Tensor<T> s2 = cfg_.gated_skips ? sa2_.forward(f2) : f2;
        Tensor<T> s3 = cfg_.gated_skips ? ca3_.forward(f3) : f3;
        Tensor<T> s4 = cfg_.gated_skips ? ca4_.forward(f4) : f4;
        if (cfg_.atrous_all_high) {
            s3 = atrous3_.forward(s3);
            s4 = atrous4_.forward(s4);
        }
        Tensor<T> bottleneck = atrous5_.forward(ca5_.forward(f5));

        Tensor<T> d = dec4_.forward(cat2(up4_.forward(bottleneck), s4));
        d = dec3_.forward(cat2(up3_.forward(d), s3));
        d = dec2_.forward(cat2(up2_.forward(d), s2));
        d = dec1_.forward(cat2(up1_.forward(d), s1));
        return classifier_.forward(d);
    }

    // dlogits: gradient w.r.t. the logits. Accumulates parameter gradients and
    // returns the gradient w.r.t. the input block.
    Tensor<T> backward(const Tensor<T>& dlogits) {
        const auto& ch = cfg_.encoder_channels;
        Tensor<T> d = classifier_.backward(dlogits);

        auto up_split = [&](SkipBlock<T>& dec, TransposedConv3d<T>& up, std::size_t up_ch,
                            std::size_t skip_ch, Tensor<T>& d_in,
                            Tensor<T>& d_skip) {
            Tensor<T> dcat = dec.backward(d_in);
            auto parts = split_channels(dcat, {up_ch, skip_ch});
            d_in = up.backward(parts[0]);
            d_skip = std::move(parts[1]);
        };

        Tensor<T> ds1, ds2, ds3, ds4;
        up_split(dec1_, up1_, ch[0], ch[0], d, ds1);
        up_split(dec2_, up2_, ch[1], ch[1], d, ds2);
        up_split(dec3_, up3_, ch[2], ch[2], d, ds3);
        up_split(dec4_, up4_, ch[3], ch[3], d, ds4);

        Tensor<T> df5 = ca5_.backward(atrous5_.backward(d));
        if (cfg_.atrous_all_high) {
            ds3 = atrous3_.backward(ds3);
            ds4 = atrous4_.backward(ds4);
        }
        Tensor<T> df4 = cfg_.gated_skips ? ca4_.backward(ds4) : std::move(ds4);
        Tensor<T> df3 = cfg_.gated_skips ? ca3_.backward(ds3) : std::move(ds3);
        Tensor<T> df2 = cfg_.gated_skips ? sa2_.backward(ds2) : std::move(ds2);
        Tensor<T> df1 = cfg_.gated_skips ? sa1_.backward(ds1) : std::move(ds1);

        // Encoder features fan out to both the deeper path and their skip, so
        // the two gradient contributions add.
        add_inplace(df4, down4_.backward(stage5_.backward(df5)));
        add_inplace(df3, down3_.backward(stage4_.backward(df4)));
        add_inplace(df2, down2_.backward(stage3_.backward(df3)));
        add_inplace(df1, down1_.backward(stage2_.backward(df2)));
        return stage1_.backward(df1);
    }

    ParamList<T> parameters() {
        ParamList<T> out;
        stage1_.collect("enc.stage1", out);
        down1_.collect("enc.down1", out);
        stage2_.collect("enc.stage2", out);
        down2_.collect("enc.down2", out);
        stage3_.collect("enc.stage3", out);
        down3_.collect("enc.down3", out);
        stage4_.collect("enc.stage4", out);
        down4_.collect("enc.down4", out);
        stage5_.collect("enc.stage5", out);
        sa1_.collect("att.sa1", out);
        sa2_.collect("att.sa2", out);
        ca3_.collect("att.ca3", out);
        ca4_.collect("att.ca4", out);
        ca5_.collect("att.ca5", out);
        if (cfg_.atrous_all_high) {
            atrous3_.collect("att.atrous3", out);
            atrous4_.collect("att.atrous4", out);
        }
        atrous5_.collect("att.atrous5", out);
        up4_.collect("dec.up4", out);
        dec4_.collect("dec.stage4", out);
        up3_.collect("dec.up3", out);
        dec3_.collect("dec.stage3", out);
        up2_.collect("dec.up2", out);
        dec2_.collect("dec.stage2", out);
        up1_.collect("dec.up1", out);
        dec1_.collect("dec.stage1", out);
        classifier_.collect("dec.classifier", out);
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.grad->zero();
    }

    std::size_t count_parameters() {
        std::size_t n = 0;
        for (auto& p : parameters()) n += p.value->numel();
        return n;
    }

    // Direct access for gate-forcing tests and ablation probes.
    SpatialAttention<T>& sa1() { return sa1_; }
    SpatialAttention<T>& sa2() { return sa2_; }
    ChannelAttention<T>& ca3() { return ca3_; }
    ChannelAttention<T>& ca4() { return ca4_; }
    ChannelAttention<T>& ca5() { return ca5_; }
    AtrousBlock<T>& atrous5() { return atrous5_; }

   private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 5)
            throw ShapeError("network: input must be (N, C, X, Y, Z), got " + x.shape_string());
        if (x.dim(1) != static_cast<std::size_t>(cfg_.in_channels))
            throw ShapeError("network: input has " + std::to_string(x.dim(1)) +
                             " channels, config expects " + std::to_string(cfg_.in_channels));
        for (int a = 2; a < 5; ++a)
            if (x.dim(a) % 16 != 0 || x.dim(a) == 0)
                throw ShapeError("network: spatial dims must be divisible by 16 (four "
                                 "downsamplings), got " +
                                 x.shape_string());
    }

    static Tensor<T> cat2(const Tensor<T>& a, const Tensor<T>& b) {
        return concat_channels<T>({&a, &b});
    }

    NetworkConfig cfg_;

    SkipBlock<T> stage1_, stage2_, stage3_, stage4_, stage5_;
    Downsample<T> down1_, down2_, down3_, down4_;
    SpatialAttention<T> sa1_, sa2_;
    ChannelAttention<T> ca3_, ca4_, ca5_;
    AtrousBlock<T> atrous3_, atrous4_, atrous5_;
    TransposedConv3d<T> up4_, up3_, up2_, up1_;
    SkipBlock<T> dec4_, dec3_, dec2_, dec1_;
    Conv3d<T> classifier_;
};

}  // namespace voxseg::nn
