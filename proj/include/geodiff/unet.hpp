#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/nn.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/schedule.hpp"
#include "geodiff/tensor.hpp"
#include "geodiff/tensor_file.hpp"

namespace geodiff {

// Decoder shape contract, bottom to top. Layer 1 sits at the lowest
// resolution; the feature tap for layer L returns the activation of row L at
// its native resolution.
struct DecoderRow {
    std::size_t resolution;
    std::size_t channels;  // at channel scale 1
    bool attention;
};

inline constexpr std::array<DecoderRow, 12> kDecoderTable{{
    {8, 768, true},  {8, 768, true},
    {16, 768, true}, {16, 576, true}, {16, 576, true}, {16, 576, true},
    {32, 576, true}, {32, 384, true}, {32, 384, true}, {32, 384, true},
    {64, 384, false}, {64, 192, false},
}};

// Encoder widths at channel scale 1 for resolutions 64, 32, 16, 8.
inline constexpr std::array<std::size_t, 4> kEncoderChannels{192, 384, 576, 768};

struct UNetConfig {
    std::size_t input_side = 64;
    std::size_t channel_scale = 8;  // divisor applied to every table width
    std::size_t time_embed_width = 64;
    std::size_t attention_heads = 4;

    std::size_t scaled(std::size_t channels) const { return channels / channel_scale; }

    void validate() const {
        if (input_side != 64)
            throw ConfigError("backbone input side is fixed at 64 by the decoder layout");
        if (channel_scale == 0) throw ConfigError("channel scale must be positive");
        for (const auto& row : kDecoderTable) {
            if (row.channels % channel_scale != 0)
                throw ConfigError("channel scale " + std::to_string(channel_scale) +
                                  " does not divide decoder width " + std::to_string(row.channels));
            if (row.channels / channel_scale < 8)
                throw ConfigError("channel scale " + std::to_string(channel_scale) +
                                  " leaves fewer than 8 channels");
            if (row.attention && (row.channels / channel_scale) % attention_heads != 0)
                throw ConfigError("attention heads must divide every attended decoder width");
        }
        for (std::size_t c : kEncoderChannels)
            if (c % channel_scale != 0)
                throw ConfigError("channel scale does not divide encoder width " + std::to_string(c));
        if (attention_heads == 0) throw ConfigError("attention needs at least one head");
        if (time_embed_width < 8 || time_embed_width % 2 != 0)
            throw ConfigError("time embedding width must be even and at least 8");
    }

    std::uint64_t hash() const {
        std::uint64_t h = io::fnv1a_str("unet-config");
        const std::uint64_t fields[4] = {input_side, channel_scale, time_embed_width, attention_heads};
        h = io::fnv1a(fields, sizeof fields, h);
        return h;
    }
};

namespace unet_detail {

// sin/cos position code for a scalar timestep
template <typename T>
Tensor<T> sinusoidal_embedding(std::size_t t, std::size_t width) {
    const std::size_t half = width / 2;
    Tensor<T> e({width});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half > 1 ? half - 1 : 1));
        e.data[i] = T(std::sin(double(t) * freq));
        e.data[half + i] = T(std::cos(double(t) * freq));
    }
    return e;
}

template <typename T>
Tensor<T> silu_all(Tensor<T> x) {
    for (auto& v : x.data) v = nn::silu(v);
    return x;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape[0] != b.shape[0] || a.shape[1] != b.shape[1])
        throw DimensionError("skip concat: spatial extents differ");
    const std::size_t H = a.shape[0], W = a.shape[1];
    const std::size_t ca = a.shape[2], cb = b.shape[2];
    Tensor<T> out({H, W, ca + cb});
    for (std::size_t p = 0; p < H * W; ++p) {
        T* dst = out.data.data() + p * (ca + cb);
        const T* pa = a.data.data() + p * ca;
        const T* pb = b.data.data() + p * cb;
        for (std::size_t c = 0; c < ca; ++c) dst[c] = pa[c];
        for (std::size_t c = 0; c < cb; ++c) dst[ca + c] = pb[c];
    }
    return out;
}

// Residual-branch damping applied to the last convolution of every residual
// block and to the attention output projection. Trained diffusion nets start
// those weights at zero; a frozen random net needs them small, or activations
// amplify multiplicatively with depth and swamp the downstream classifiers.
inline constexpr double kResidualScale = 1.0;

// Residual conv block with a per-block affine time injection between the two
// convolutions.
template <typename T>
struct ResBlock {
    nn::GroupNorm<T> gn1, gn2;
    nn::Conv2d<T> conv1, conv2;
    nn::Dense<T> emb;  // time embedding -> scale and shift
    std::optional<nn::Conv2d<T>> skip;

    static ResBlock seeded(std::size_t in_ch, std::size_t out_ch, std::size_t emb_width, Rng& rng) {
        ResBlock b;
        b.gn1 = nn::GroupNorm<T>::unit(in_ch);
        b.conv1 = nn::Conv2d<T>::seeded(in_ch, out_ch, 3, 1, rng);
        b.gn2 = nn::GroupNorm<T>::unit(out_ch);
        b.emb = nn::Dense<T>::seeded(emb_width, 2 * out_ch, nn::Activation::identity, rng);
        b.conv2 = nn::Conv2d<T>::seeded(out_ch, out_ch, 3, 1, rng);
        for (auto& v : b.conv2.w.data) v = T(double(v) * kResidualScale);
        if (in_ch != out_ch) b.skip = nn::Conv2d<T>::seeded_linear(in_ch, out_ch, 1, 1, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb) const {
        Tensor<T> h = conv1.forward(silu_all(gn1.forward(x)));
        const Tensor<T> sb = emb.forward(silu_all(temb));
        const std::size_t out_ch = conv1.out_ch;
        h = gn2.forward(h);
        for (std::size_t p = 0; p < h.shape[0] * h.shape[1]; ++p) {
            T* px = h.data.data() + p * out_ch;
            for (std::size_t c = 0; c < out_ch; ++c)
                px[c] = px[c] * (T(1) + sb.data[c]) + sb.data[out_ch + c];
        }
        h = conv2.forward(silu_all(std::move(h)));
        const Tensor<T> res = skip ? skip->forward(x) : x;
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += res.data[i];
        return h;
    }
};

// Pre-normalised residual attention over the flattened spatial grid.
template <typename T>
struct AttnBlock {
    nn::GroupNorm<T> gn;
    nn::SelfAttention<T> att;

    static AttnBlock seeded(std::size_t channels, std::size_t heads, Rng& rng) {
        AttnBlock b;
        b.gn = nn::GroupNorm<T>::unit(channels);
        b.att = nn::SelfAttention<T>::seeded(channels, heads, rng);
        for (auto& v : b.att.o.w.data) v = T(double(v) * kResidualScale);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t H = x.shape[0], W = x.shape[1], C = x.shape[2];
        Tensor<T> tokens = gn.forward(x);
        tokens.shape = {H * W, C};
        Tensor<T> mixed = att.path(tokens);
        Tensor<T> out = x;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += mixed.data[i];
        return out;
    }
};

}  // namespace unet_detail

// Feature plane sampled per pixel: h x w positions, d channels.
template <typename T>
struct FeatureMap {
    std::size_t h = 0, w = 0, d = 0;
    std::vector<T> data;  // h*w*d

    const T* row(std::size_t r, std::size_t c) const { return data.data() + (r * w + c) * d; }
};

// Shape-faithful diffusion U-Net used as a frozen feature extractor. The
// encoder mirrors the decoder resolutions (two residual blocks per level);
// decoder rows follow kDecoderTable and the first two rows at each resolution
// concatenate the matching encoder activations.
template <typename T = float>
class FrozenUNet {
public:
    static FrozenUNet seeded(const UNetConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        FrozenUNet net;
        net.cfg_ = cfg;
        Rng rng(Rng::mix(seed, 0x756e6574ull));
        net.build(rng);
        return net;
    }

    const UNetConfig& config() const { return cfg_; }

    // Named parameters in a fixed walk order. The list is rebuilt per call so
    // it stays valid however the net was copied or moved.
    std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        const_cast<FrozenUNet*>(this)->for_each_param(
            [&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, tensor] : named_parameters()) n += tensor->size();
        return n;
    }

    // FNV-1a over parameter names and payload bytes; constant across forward
    // passes because evaluation never writes to the weights.
    std::uint64_t checksum() const {
        std::uint64_t h = io::fnv1a_str("unet-params");
        for (const auto& [name, tensor] : named_parameters()) {
            h = io::fnv1a_str(name, h);
            h = io::fnv1a(tensor->data.data(), tensor->data.size() * sizeof(T), h);
        }
        return h;
    }

    // Runs the network and returns the requested decoder activations (row
    // indices 1..12) at their native resolutions.
    std::map<int, Tensor<T>> decoder_taps(const Tensor<T>& x, std::size_t t,
                                          const std::vector<int>& layers) const {
        if (x.rank() != 3 || x.shape[0] != cfg_.input_side || x.shape[1] != cfg_.input_side ||
            x.shape[2] != 3)
            throw DimensionError("backbone input must be " + std::to_string(cfg_.input_side) + "x" +
                                 std::to_string(cfg_.input_side) + "x3");
        std::vector<bool> wanted(13, false);
        for (int l : layers) {
            if (l < 1 || l > 12) throw ConfigError("decoder layer index must be in 1..12");
            wanted[std::size_t(l)] = true;
        }

        using unet_detail::concat_channels;
        const Tensor<T> temb = time2_.forward(
            unet_detail::silu_all(time1_.forward(unet_detail::sinusoidal_embedding<T>(t, cfg_.time_embed_width))));

        // encoder
        Tensor<T> h = stem_.forward(x);
        std::vector<Tensor<T>> skips;  // two per resolution, push order 64,64,32,32,16,16,8,8
        for (std::size_t level = 0; level < 4; ++level) {
            h = enc_res_[2 * level].forward(h, temb);
            skips.push_back(h);
            h = enc_res_[2 * level + 1].forward(h, temb);
            skips.push_back(h);
            if (level < 3) h = down_[level].forward(h);
        }

        // bottleneck
        h = mid_res1_.forward(h, temb);
        h = mid_attn_.forward(h);
        h = mid_res2_.forward(h, temb);

        // decoder, bottom to top
        std::map<int, Tensor<T>> taps;
        for (std::size_t r = 0; r < 12; ++r) {
            const int skip_idx = kSkipSource[r];
            if (skip_idx >= 0) h = concat_channels(h, skips[std::size_t(skip_idx)]);
            h = dec_res_[r].forward(h, temb);
            if (dec_attn_[r]) h = dec_attn_[r]->forward(h);
            if (wanted[r + 1]) taps.emplace(int(r + 1), h);
            if (r == 1 || r == 5 || r == 9) h = up_[r / 4].forward(nn::nearest_upsample2(h));
        }
        return taps;
    }

    void save(const std::string& path) const {
        const auto params = named_parameters();
        std::ofstream os(path, std::ios::binary);
        if (!os) throw FormatError("cannot open '" + path + "' for writing");
        os.write("UNET", 4);
        io::write_u64(os, cfg_.hash());
        io::write_u32(os, std::uint32_t(params.size()));
        for (const auto& [name, tensor] : params) io::write_named_tensor(os, name, *tensor);
        if (!os) throw FormatError("short write to '" + path + "'");
    }

    // Loads weights saved for an identical configuration. The first tensor
    // whose name or shape disagrees is named in the error.
    static FrozenUNet load(const std::string& path, const UNetConfig& cfg) {
        cfg.validate();
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open '" + path + "'");
        io::Reader r{is, 0, path};
        r.expect_magic("UNET");
        const std::uint64_t hash = r.u64("config hash");
        if (hash != cfg.hash())
            throw FormatError(path + ": weight file was produced for a different backbone configuration");
        FrozenUNet net;
        net.cfg_ = cfg;
        Rng rng(0);
        net.build(rng);

        std::vector<std::pair<std::string, Tensor<T>*>> params;
        net.for_each_param([&](const std::string& name, Tensor<T>& t) { params.emplace_back(name, &t); });
        const std::uint32_t count = r.u32("tensor count");
        if (count != params.size())
            throw FormatError(path + ": tensor count " + std::to_string(count) + " does not match " +
                              std::to_string(params.size()));
        for (std::uint32_t i = 0; i < count; ++i) {
            auto [name, tensor] = io::read_named_tensor<T>(r);
            if (name != params[i].first)
                throw FormatError(path + ": unexpected tensor '" + name + "' (wanted '" +
                                  params[i].first + "')");
            if (tensor.shape != params[i].second->shape)
                throw FormatError(path + ": shape mismatch for tensor '" + name + "'");
            params[i].second->data = std::move(tensor.data);
        }
        r.expect_eof();
        return net;
    }

private:
    UNetConfig cfg_;

    nn::Conv2d<T> stem_;
    nn::Dense<T> time1_, time2_;
    std::vector<unet_detail::ResBlock<T>> enc_res_;  // 8 blocks, two per level
    std::vector<nn::Conv2d<T>> down_;                // 3 stride-2 convs
    unet_detail::ResBlock<T> mid_res1_, mid_res2_;
    unet_detail::AttnBlock<T> mid_attn_;
    std::vector<unet_detail::ResBlock<T>> dec_res_;                   // 12 rows
    std::vector<std::optional<unet_detail::AttnBlock<T>>> dec_attn_;  // per row
    std::vector<nn::Conv2d<T>> up_;                                   // after rows 2, 6, 10

    // decoder row -> index into the encoder skip stack (-1: none)
    static constexpr int kSkipSource[12] = {7, 6, 5, 4, -1, -1, 3, 2, -1, -1, 1, 0};

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        const auto dense = [&](const std::string& p, nn::Dense<T>& d) {
            fn(p + ".w", d.w);
            fn(p + ".b", d.b);
        };
        const auto conv = [&](const std::string& p, nn::Conv2d<T>& c) {
            fn(p + ".w", c.w);
            fn(p + ".b", c.b);
        };
        const auto gnorm = [&](const std::string& p, nn::GroupNorm<T>& g) {
            fn(p + ".gamma", g.gamma);
            fn(p + ".beta", g.beta);
        };
        const auto res = [&](const std::string& p, unet_detail::ResBlock<T>& b) {
            gnorm(p + ".gn1", b.gn1);
            conv(p + ".conv1", b.conv1);
            dense(p + ".emb", b.emb);
            gnorm(p + ".gn2", b.gn2);
            conv(p + ".conv2", b.conv2);
            if (b.skip) conv(p + ".skip", *b.skip);
        };
        const auto attn = [&](const std::string& p, unet_detail::AttnBlock<T>& b) {
            gnorm(p + ".gn", b.gn);
            dense(p + ".q", b.att.q);
            dense(p + ".k", b.att.k);
            dense(p + ".v", b.att.v);
            dense(p + ".o", b.att.o);
        };

        dense("time.fc1", time1_);
        dense("time.fc2", time2_);
        conv("enc.stem", stem_);
        static const char* kLevel[4] = {"64", "32", "16", "8"};
        for (std::size_t level = 0; level < 4; ++level) {
            for (std::size_t i = 0; i < 2; ++i)
                res("enc." + std::string(kLevel[level]) + ".res" + std::to_string(i),
                    enc_res_[2 * level + i]);
            if (level < 3) conv("enc." + std::string(kLevel[level]) + ".down", down_[level]);
        }
        res("mid.res1", mid_res1_);
        attn("mid.attn", mid_attn_);
        res("mid.res2", mid_res2_);
        for (std::size_t r = 0; r < 12; ++r) {
            res("dec.r" + std::to_string(r + 1), dec_res_[r]);
            if (dec_attn_[r]) attn("dec.r" + std::to_string(r + 1) + ".attn", *dec_attn_[r]);
            if (r == 1 || r == 5 || r == 9) conv("dec.up" + std::to_string(r / 4 + 1), up_[r / 4]);
        }
    }

    void build(Rng& rng) {
        using unet_detail::AttnBlock;
        using unet_detail::ResBlock;
        const std::size_t s = cfg_.channel_scale;
        const std::size_t ec[4] = {kEncoderChannels[0] / s, kEncoderChannels[1] / s,
                                   kEncoderChannels[2] / s, kEncoderChannels[3] / s};
        const std::size_t tw = cfg_.time_embed_width;

        time1_ = nn::Dense<T>::seeded(tw, tw, nn::Activation::identity, rng);
        time2_ = nn::Dense<T>::seeded(tw, tw, nn::Activation::identity, rng);
        stem_ = nn::Conv2d<T>::seeded_linear(3, ec[0], 3, 1, rng);

        enc_res_.clear();
        down_.clear();
        for (std::size_t level = 0; level < 4; ++level) {
            for (std::size_t i = 0; i < 2; ++i)
                enc_res_.push_back(ResBlock<T>::seeded(ec[level], ec[level], tw, rng));
            if (level < 3)
                down_.push_back(nn::Conv2d<T>::seeded_linear(ec[level], ec[level + 1], 3, 2, rng));
        }

        mid_res1_ = ResBlock<T>::seeded(ec[3], ec[3], tw, rng);
        mid_attn_ = AttnBlock<T>::seeded(ec[3], cfg_.attention_heads, rng);
        mid_res2_ = ResBlock<T>::seeded(ec[3], ec[3], tw, rng);

        // skip widths follow the encoder level of each decoder resolution
        const auto skip_width = [&](std::size_t resolution) {
            switch (resolution) {
                case 64: return ec[0];
                case 32: return ec[1];
                case 16: return ec[2];
                default: return ec[3];
            }
        };

        dec_res_.clear();
        dec_attn_.clear();
        up_.clear();
        std::size_t cur = ec[3];
        for (std::size_t r = 0; r < 12; ++r) {
            const auto& row = kDecoderTable[r];
            const std::size_t out_ch = row.channels / s;
            std::size_t in_ch = cur;
            if (kSkipSource[r] >= 0) in_ch += skip_width(row.resolution);
            dec_res_.push_back(ResBlock<T>::seeded(in_ch, out_ch, tw, rng));
            if (row.attention)
                dec_attn_.emplace_back(AttnBlock<T>::seeded(out_ch, cfg_.attention_heads, rng));
            else
                dec_attn_.emplace_back(std::nullopt);
            cur = out_ch;
            if (r == 1 || r == 5 || r == 9)
                up_.push_back(nn::Conv2d<T>::seeded_linear(cur, cur, 3, 1, rng));
        }
    }
};

// Noises the patch at timestep t and returns the bilinearly upsampled
// activations of the requested decoder layers. One noise draw is shared by
// every tapped layer.
template <typename T>
std::map<int, FeatureMap<T>> extract_feature_layers(const FrozenUNet<T>& net, const Tensor<T>& patch,
                                                    std::size_t t, const std::vector<int>& layers,
                                                    const NoiseSchedule& sched, Rng& rng) {
    const Tensor<T> xt = forward_noise(patch, t, sched, rng);
    auto taps = net.decoder_taps(xt, t, layers);
    const std::size_t side = net.config().input_side;
    std::map<int, FeatureMap<T>> out;
    for (auto& [layer, tap] : taps) {
        Tensor<T> up = nn::bilinear_resize(tap, side, side);
        FeatureMap<T> fm;
        fm.h = side;
        fm.w = side;
        fm.d = up.shape[2];
        fm.data = std::move(up.data);
        out.emplace(layer, std::move(fm));
    }
    return out;
}

template <typename T>
FeatureMap<T> extract_features(const FrozenUNet<T>& net, const Tensor<T>& patch, std::size_t t,
                               int layer, const NoiseSchedule& sched, Rng& rng) {
    auto got = extract_feature_layers(net, patch, t, {layer}, sched, rng);
    return std::move(got.at(layer));
}

}  // namespace geodiff
