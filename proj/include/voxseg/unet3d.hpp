#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume_io.hpp"

// Encoder-decoder segmentation net built from the ops primitives.
//
// Topology for levels=2, base=8:
//   enc0 (c 8)  -> pool -> enc1 (c 16) -> pool -> bottleneck (c 32)
//   -> up+skip1 -> dec1 (c 16) -> up+skip0 -> dec0 (c 8) -> 3x3x3 conv to L
// Every conv is 3x3x3 same-padding followed by ReLU, except the final logit
// layer which has no activation.

namespace voxseg {

struct UNetConfig {
    int in_channels = 1;
    int num_classes = 2;
    int levels = 2;
    int base_channels = 8;
    Shape3 patch{32, 32, 32};

    void validate() const {
        if (in_channels < 1)
            throw std::invalid_argument("UNetConfig: in_channels must be >= 1");
        if (num_classes < 2 || num_classes > 255)
            throw std::invalid_argument("UNetConfig: num_classes must be in [2, 255]");
        if (levels < 1)
            throw std::invalid_argument("UNetConfig: levels must be >= 1");
        if (base_channels < 1)
            throw std::invalid_argument("UNetConfig: base_channels must be >= 1");
        const std::uint32_t div = 1u << levels;
        if (patch.nx % div || patch.ny % div || patch.nz % div)
            throw std::invalid_argument("UNetConfig: patch " + patch.str() +
                                        " not divisible by 2^levels = " + std::to_string(div));
    }

    bool operator==(const UNetConfig&) const = default;
};

struct ConvSpec {
    int in_c = 0;
    int out_c = 0;
    bool relu_after = true;
};

// Conv layers in execution order: encoder pairs, bottleneck pair, decoder
// pairs (deepest first), then the logit layer.
inline std::vector<ConvSpec> unet_layer_specs(const UNetConfig& cfg) {
    cfg.validate();
    std::vector<ConvSpec> specs;
    auto width = [&](int level) { return cfg.base_channels << level; };
    for (int l = 0; l < cfg.levels; ++l) {
        const int in = l == 0 ? cfg.in_channels : width(l - 1);
        specs.push_back({in, width(l), true});
        specs.push_back({width(l), width(l), true});
    }
    specs.push_back({width(cfg.levels - 1), width(cfg.levels), true});
    specs.push_back({width(cfg.levels), width(cfg.levels), true});
    for (int l = cfg.levels - 1; l >= 0; --l) {
        specs.push_back({width(l + 1) + width(l), width(l), true});
        specs.push_back({width(l), width(l), true});
    }
    specs.push_back({width(0), cfg.num_classes, false});
    return specs;
}

template <typename Scalar>
struct UNetParams {
    UNetConfig config;
    std::vector<ConvKernel<Scalar>> layers;

    static UNetParams zeros(const UNetConfig& cfg) {
        UNetParams p;
        p.config = cfg;
        for (const ConvSpec& s : unet_layer_specs(cfg))
            p.layers.push_back(ConvKernel<Scalar>::zeros(s.out_c, s.in_c));
        return p;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& k : layers)
            n += k.parameter_count();
        return n;
    }

    // Weights then bias per layer, layers in execution order.
    std::vector<Scalar> flatten() const {
        std::vector<Scalar> out;
        out.reserve(parameter_count());
        for (const auto& k : layers) {
            out.insert(out.end(), k.weights.begin(), k.weights.end());
            out.insert(out.end(), k.bias.begin(), k.bias.end());
        }
        return out;
    }

    void assign(std::span<const Scalar> flat) {
        if (flat.size() != parameter_count())
            throw std::invalid_argument("UNetParams::assign: got " + std::to_string(flat.size()) +
                                        " values, need " + std::to_string(parameter_count()));
        std::size_t pos = 0;
        for (auto& k : layers) {
            std::copy_n(flat.begin() + pos, k.weights.size(), k.weights.begin());
            pos += k.weights.size();
            std::copy_n(flat.begin() + pos, k.bias.size(), k.bias.begin());
            pos += k.bias.size();
        }
    }

    template <typename Other>
    UNetParams<Other> cast() const {
        UNetParams<Other> out = UNetParams<Other>::zeros(config);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            for (std::size_t j = 0; j < layers[i].weights.size(); ++j)
                out.layers[i].weights[j] = Other(layers[i].weights[j]);
            for (std::size_t j = 0; j < layers[i].bias.size(); ++j)
                out.layers[i].bias[j] = Other(layers[i].bias[j]);
        }
        return out;
    }
};

// He initialization: weights ~ Normal(0, sqrt(2 / (in_c * 27))), biases 0.
template <typename Scalar = float>
UNetParams<Scalar> init_params(const UNetConfig& cfg, std::uint64_t seed) {
    UNetParams<Scalar> p = UNetParams<Scalar>::zeros(cfg);
    std::mt19937_64 rng(seed);
    for (auto& k : p.layers) {
        const double stddev = std::sqrt(2.0 / (double(k.in_channels) * 27.0));
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& w : k.weights)
            w = Scalar(dist(rng));
    }
    return p;
}

template <typename Scalar>
struct UNetCaches {
    bool filled = false;
    std::vector<Conv3dContext<Scalar>> conv;
    std::vector<ReluContext<Scalar>> relu_ctx;
    std::vector<MaxPool2Context<Scalar>> pool;
};

namespace detail {

template <typename Scalar>
void add_inplace(Tensor5<Scalar>& dst, const Tensor5<Scalar>& src) {
    if (!dst.same_dims(src))
        throw std::invalid_argument("add_inplace: dims " + dst.dims_str() + " vs " +
                                    src.dims_str());
    for (std::size_t i = 0; i < dst.values.size(); ++i)
        dst.values[i] += src.values[i];
}

} // namespace detail

template <typename Scalar>
Tensor5<Scalar> unet_forward(const UNetParams<Scalar>& params, const Tensor5<Scalar>& input,
                             UNetCaches<Scalar>* caches = nullptr) {
    const UNetConfig& cfg = params.config;
    if (input.channels != cfg.in_channels)
        throw std::invalid_argument("unet_forward: input has " + std::to_string(input.channels) +
                                    " channels, config expects " +
                                    std::to_string(cfg.in_channels));
    if (!(input.extent == cfg.patch))
        throw std::invalid_argument("unet_forward: input extent " + input.extent.str() +
                                    " != configured patch " + cfg.patch.str());
    const std::size_t n_conv = params.layers.size();
    if (caches) {
        caches->conv.assign(n_conv, {});
        caches->relu_ctx.assign(n_conv - 1, {});
        caches->pool.assign(std::size_t(cfg.levels), {});
        caches->filled = true;
    }
    auto conv_ctx = [&](std::size_t i) { return caches ? &caches->conv[i] : nullptr; };
    auto relu_ctx = [&](std::size_t i) { return caches ? &caches->relu_ctx[i] : nullptr; };

    std::size_t li = 0;
    Tensor5<Scalar> x = input;
    std::vector<Tensor5<Scalar>> skips;
    for (int l = 0; l < cfg.levels; ++l) {
        x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
        ++li;
        x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
        ++li;
        skips.push_back(x);
        x = maxpool2(x, caches ? &caches->pool[std::size_t(l)] : nullptr);
    }
    x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
    ++li;
    x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
    ++li;
    for (int l = cfg.levels - 1; l >= 0; --l) {
        x = concat_channels(upsample2(x), skips[std::size_t(l)]);
        x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
        ++li;
        x = relu(conv3d(x, params.layers[li], conv_ctx(li)), relu_ctx(li));
        ++li;
    }
    Tensor5<Scalar> logits = conv3d(x, params.layers[li], conv_ctx(li));
    return logits;
}

// Chain rule through the whole net; consumes the caches.
template <typename Scalar>
UNetParams<Scalar> unet_backward(const UNetParams<Scalar>& params, UNetCaches<Scalar>& caches,
                                 const Tensor5<Scalar>& grad_logits) {
    const UNetConfig& cfg = params.config;
    if (!caches.filled)
        throw std::logic_error("unet_backward: caches are stale (missing or already consumed)");
    caches.filled = false;
    if (caches.conv.size() != params.layers.size())
        throw std::logic_error("unet_backward: caches do not match this parameter set");

    UNetParams<Scalar> grads = UNetParams<Scalar>::zeros(cfg);
    std::size_t li = params.layers.size() - 1;

    auto conv_relu_back = [&](Tensor5<Scalar> g, std::size_t i) {
        Tensor5<Scalar> masked = relu_backward(g, caches.relu_ctx[i]);
        auto cg = conv3d_backward(masked, params.layers[i], caches.conv[i]);
        grads.layers[i] = std::move(cg.kernel);
        return std::move(cg.input);
    };

    auto cg = conv3d_backward(grad_logits, params.layers[li], caches.conv[li]);
    grads.layers[li] = std::move(cg.kernel);
    Tensor5<Scalar> g = std::move(cg.input);
    --li;

    // Decoder levels, shallowest first (reverse of the forward pass).
    std::vector<Tensor5<Scalar>> skip_grads(std::size_t(cfg.levels));
    for (int l = 0; l < cfg.levels; ++l) {
        g = conv_relu_back(std::move(g), li);
        --li;
        g = conv_relu_back(std::move(g), li);
        --li;
        const int up_channels = (cfg.base_channels << (l + 1));
        auto [g_up, g_skip] = concat_channels_backward(g, up_channels);
        skip_grads[std::size_t(l)] = std::move(g_skip);
        g = upsample2_backward(g_up);
    }

    g = conv_relu_back(std::move(g), li);
    --li;
    g = conv_relu_back(std::move(g), li);
    --li;

    for (int l = cfg.levels - 1; l >= 0; --l) {
        g = maxpool2_backward(g, caches.pool[std::size_t(l)]);
        detail::add_inplace(g, skip_grads[std::size_t(l)]);
        g = conv_relu_back(std::move(g), li);
        --li;
        g = conv_relu_back(std::move(g), li);
        if (li > 0)
            --li;
    }
    return grads;
}

inline constexpr std::uint8_t kVnetVersion = 1;

// Checkpoint layout, little-endian: "VNET", version u8, then in_channels,
// num_classes, levels, base_channels, patch nx/ny/nz as u32, then each conv
// layer in execution order (weights, then bias) as raw f32 bits.
inline void save_params(const UNetParams<float>& params, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), {'V', 'N', 'E', 'T'});
    bytes.push_back(kVnetVersion);
    detail::put_u32le(bytes, std::uint32_t(params.config.in_channels));
    detail::put_u32le(bytes, std::uint32_t(params.config.num_classes));
    detail::put_u32le(bytes, std::uint32_t(params.config.levels));
    detail::put_u32le(bytes, std::uint32_t(params.config.base_channels));
    detail::put_u32le(bytes, params.config.patch.nx);
    detail::put_u32le(bytes, params.config.patch.ny);
    detail::put_u32le(bytes, params.config.patch.nz);
    for (const auto& k : params.layers) {
        for (float w : k.weights)
            detail::put_f32le(bytes, w);
        for (float b : k.bias)
            detail::put_f32le(bytes, b);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("save_params: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f)
        throw std::runtime_error("save_params: short write to " + path.string());
}

inline UNetParams<float> load_params(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("load_params: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    constexpr std::size_t kHeader = 4 + 1 + 7 * 4;
    if (bytes.size() < kHeader)
        throw std::runtime_error("load_params: truncated header in " + path.string());
    if (bytes[0] != 'V' || bytes[1] != 'N' || bytes[2] != 'E' || bytes[3] != 'T')
        throw std::runtime_error("load_params: bad magic in " + path.string());
    if (bytes[4] != kVnetVersion)
        throw std::runtime_error("load_params: unsupported version " + std::to_string(bytes[4]));
    UNetConfig cfg;
    cfg.in_channels = int(detail::get_u32le(&bytes[5]));
    cfg.num_classes = int(detail::get_u32le(&bytes[9]));
    cfg.levels = int(detail::get_u32le(&bytes[13]));
    cfg.base_channels = int(detail::get_u32le(&bytes[17]));
    cfg.patch = Shape3{detail::get_u32le(&bytes[21]), detail::get_u32le(&bytes[25]),
                       detail::get_u32le(&bytes[29])};
    cfg.validate();
    UNetParams<float> p = UNetParams<float>::zeros(cfg);
    const std::size_t expect = kHeader + p.parameter_count() * 4;
    if (bytes.size() < expect)
        throw std::runtime_error("load_params: truncated payload in " + path.string() + " (" +
                                 std::to_string(bytes.size()) + " of " + std::to_string(expect) +
                                 " bytes)");
    if (bytes.size() > expect)
        throw std::runtime_error("load_params: trailing bytes in " + path.string());
    std::size_t pos = kHeader;
    for (auto& k : p.layers) {
        for (float& w : k.weights) {
            w = detail::get_f32le(&bytes[pos]);
            pos += 4;
        }
        for (float& b : k.bias) {
            b = detail::get_f32le(&bytes[pos]);
            pos += 4;
        }
    }
    return p;
}

} // namespace voxseg
