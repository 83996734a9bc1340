#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "voxseg/tensor.hpp"

// Differentiable building blocks. Every op is a pure function of its inputs;
// forward passes optionally fill a context struct holding exactly what the
// matching backward pass needs. Internal parallel loops assign each output
// element to a single owner, so results are identical at any thread count.

namespace voxseg {

// 3x3x3 convolution weights plus per-output-channel bias.
// Weight layout: [out][in][kx][ky][kz].
template <typename Scalar>
struct ConvKernel {
    int out_channels = 0;
    int in_channels = 0;
    std::vector<Scalar> weights;
    std::vector<Scalar> bias;

    static ConvKernel zeros(int out_c, int in_c) {
        if (out_c < 1 || in_c < 1)
            throw std::invalid_argument("ConvKernel: channel counts must be >= 1");
        ConvKernel k;
        k.out_channels = out_c;
        k.in_channels = in_c;
        k.weights.assign(std::size_t(out_c) * in_c * 27, Scalar(0));
        k.bias.assign(std::size_t(out_c), Scalar(0));
        return k;
    }

    std::size_t weight_index(int o, int i, int a, int b, int c) const {
        return ((((std::size_t(o) * in_channels + i) * 3 + a) * 3 + b) * 3) + c;
    }
    Scalar w(int o, int i, int a, int b, int c) const { return weights[weight_index(o, i, a, b, c)]; }
    Scalar& w(int o, int i, int a, int b, int c) { return weights[weight_index(o, i, a, b, c)]; }

    std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

template <typename Scalar>
struct Conv3dContext {
    Tensor5<Scalar> input;
};

template <typename Scalar>
struct Conv3dGrads {
    Tensor5<Scalar> input;
    ConvKernel<Scalar> kernel;
};

namespace detail {

// out[x,y,z] += w * src[x+dx, y+dy, z+dz] over in-bounds source voxels.
// The inner z loop is a contiguous axpy and vectorizes.
template <typename Scalar>
inline void add_shifted(Scalar* __restrict__ out, const Scalar* __restrict__ src, int nx, int ny,
                        int nz, int dx, int dy, int dz, Scalar w) {
    const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
    const int y0 = std::max(0, -dy), y1 = std::min(ny, ny - dy);
    const int z0 = std::max(0, -dz), z1 = std::min(nz, nz - dz);
    for (int x = x0; x < x1; ++x) {
        for (int y = y0; y < y1; ++y) {
            Scalar* orow = out + (std::size_t(x) * ny + y) * nz;
            const Scalar* srow = src + (std::size_t(x + dx) * ny + (y + dy)) * nz + dz;
            for (int z = z0; z < z1; ++z)
                orow[z] += w * srow[z];
        }
    }
}

// sum over in-bounds voxels of a[x,y,z] * b[x+dx, y+dy, z+dz], accumulated in
// double with four interleaved partials (fixed order, so deterministic).
template <typename Scalar>
inline double dot_shifted(const Scalar* __restrict__ a, const Scalar* __restrict__ b, int nx,
                          int ny, int nz, int dx, int dy, int dz) {
    const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
    const int y0 = std::max(0, -dy), y1 = std::min(ny, ny - dy);
    const int z0 = std::max(0, -dz), z1 = std::min(nz, nz - dz);
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    for (int x = x0; x < x1; ++x) {
        for (int y = y0; y < y1; ++y) {
            const Scalar* arow = a + (std::size_t(x) * ny + y) * nz;
            const Scalar* brow = b + (std::size_t(x + dx) * ny + (y + dy)) * nz + dz;
            int z = z0;
            for (; z + 4 <= z1; z += 4) {
                acc0 += double(arow[z]) * double(brow[z]);
                acc1 += double(arow[z + 1]) * double(brow[z + 1]);
                acc2 += double(arow[z + 2]) * double(brow[z + 2]);
                acc3 += double(arow[z + 3]) * double(brow[z + 3]);
            }
            for (; z < z1; ++z)
                acc0 += double(arow[z]) * double(brow[z]);
        }
    }
    return (acc0 + acc1) + (acc2 + acc3);
}

} // namespace detail

// Same-size 3D convolution: stride 1, zero padding 1, 3x3x3 taps.
// out[b,o,p] = bias[o] + sum_{i,d} in[b,i,p+d-1] * k[o,i,d]
template <typename Scalar>
Tensor5<Scalar> conv3d(const Tensor5<Scalar>& input, const ConvKernel<Scalar>& kernel,
                       Conv3dContext<Scalar>* ctx = nullptr) {
    if (input.channels != kernel.in_channels)
        throw std::invalid_argument("conv3d: input has " + std::to_string(input.channels) +
                                    " channels, kernel expects " +
                                    std::to_string(kernel.in_channels));
    Tensor5<Scalar> out = Tensor5<Scalar>::zeros(input.batch, kernel.out_channels, input.extent);
    const int nx = int(input.extent.nx), ny = int(input.extent.ny), nz = int(input.extent.nz);
    const std::size_t slab = input.extent.voxels();
    const int tasks = input.batch * kernel.out_channels;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tasks; ++t) {
        const int b = t / kernel.out_channels;
        const int o = t % kernel.out_channels;
        Scalar* oc = out.channel(b, o);
        std::fill(oc, oc + slab, kernel.bias[o]);
        for (int i = 0; i < kernel.in_channels; ++i) {
            const Scalar* ic = input.channel(b, i);
            for (int a = 0; a < 3; ++a)
                for (int bb = 0; bb < 3; ++bb)
                    for (int c = 0; c < 3; ++c)
                        detail::add_shifted(oc, ic, nx, ny, nz, a - 1, bb - 1, c - 1,
                                            kernel.w(o, i, a, bb, c));
        }
    }
    if (ctx)
        ctx->input = input;
    debug_check_finite(out, "conv3d");
    return out;
}

template <typename Scalar>
Conv3dGrads<Scalar> conv3d_backward(const Tensor5<Scalar>& grad_out,
                                    const ConvKernel<Scalar>& kernel,
                                    const Conv3dContext<Scalar>& ctx) {
    const Tensor5<Scalar>& input = ctx.input;
    if (input.values.empty())
        throw std::invalid_argument("conv3d_backward: context was not filled by a forward pass");
    if (grad_out.batch != input.batch || !(grad_out.extent == input.extent) ||
        grad_out.channels != kernel.out_channels || input.channels != kernel.in_channels)
        throw std::invalid_argument("conv3d_backward: gradient dims " + grad_out.dims_str() +
                                    " do not match forward output");
    const int nx = int(input.extent.nx), ny = int(input.extent.ny), nz = int(input.extent.nz);

    Conv3dGrads<Scalar> g;
    g.input = Tensor5<Scalar>::zeros(input.batch, input.channels, input.extent);
    g.kernel = ConvKernel<Scalar>::zeros(kernel.out_channels, kernel.in_channels);

    // dL/dinput: correlate grad_out with the spatially flipped kernel.
    const int in_tasks = input.batch * kernel.in_channels;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < in_tasks; ++t) {
        const int b = t / kernel.in_channels;
        const int i = t % kernel.in_channels;
        Scalar* gin = g.input.channel(b, i);
        for (int o = 0; o < kernel.out_channels; ++o) {
            const Scalar* go = grad_out.channel(b, o);
            for (int a = 0; a < 3; ++a)
                for (int bb = 0; bb < 3; ++bb)
                    for (int c = 0; c < 3; ++c)
                        detail::add_shifted(gin, go, nx, ny, nz, 1 - a, 1 - bb, 1 - c,
                                            kernel.w(o, i, a, bb, c));
        }
    }

    // dL/dweights: shifted dot of grad_out with the cached input, summed over
    // the batch in index order.
#pragma omp parallel for schedule(static)
    for (int o = 0; o < kernel.out_channels; ++o) {
        double bias_acc = 0.0;
        for (int b = 0; b < input.batch; ++b) {
            const Scalar* go = grad_out.channel(b, o);
            const std::size_t slab = input.extent.voxels();
            for (std::size_t v = 0; v < slab; ++v)
                bias_acc += double(go[v]);
        }
        g.kernel.bias[o] = Scalar(bias_acc);
        for (int i = 0; i < kernel.in_channels; ++i) {
            for (int a = 0; a < 3; ++a)
                for (int bb = 0; bb < 3; ++bb)
                    for (int c = 0; c < 3; ++c) {
                        double acc = 0.0;
                        for (int b = 0; b < input.batch; ++b)
                            acc += detail::dot_shifted(grad_out.channel(b, o),
                                                       input.channel(b, i), nx, ny, nz, a - 1,
                                                       bb - 1, c - 1);
                        g.kernel.w(o, i, a, bb, c) = Scalar(acc);
                    }
        }
    }
    return g;
}

template <typename Scalar>
struct ReluContext {
    Tensor5<Scalar> input;
};

template <typename Scalar>
Tensor5<Scalar> relu(const Tensor5<Scalar>& input, ReluContext<Scalar>* ctx = nullptr) {
    Tensor5<Scalar> out = input;
    Scalar* v = out.values.data();
    const std::int64_t n = std::int64_t(out.values.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < n; ++j)
        v[j] = v[j] > Scalar(0) ? v[j] : Scalar(0);
    if (ctx)
        ctx->input = input;
    return out;
}

// Gradient is masked where the forward input was <= 0 (0 at the kink).
template <typename Scalar>
Tensor5<Scalar> relu_backward(const Tensor5<Scalar>& grad_out, const ReluContext<Scalar>& ctx) {
    if (!grad_out.same_dims(ctx.input))
        throw std::invalid_argument("relu_backward: gradient dims " + grad_out.dims_str() +
                                    " do not match forward input " + ctx.input.dims_str());
    Tensor5<Scalar> g = grad_out;
    Scalar* gv = g.values.data();
    const Scalar* in = ctx.input.values.data();
    const std::int64_t n = std::int64_t(g.values.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < n; ++j)
        if (!(in[j] > Scalar(0)))
            gv[j] = Scalar(0);
    return g;
}

template <typename Scalar>
struct MaxPool2Context {
    int batch = 0;
    int channels = 0;
    Shape3 in_extent{1, 1, 1};
    std::vector<std::uint32_t> argmax; // flat in-slab index per output voxel
};

// 2x2x2 max pooling, stride 2. Ties go to the first voxel in slab scan order
// (z fastest), which makes the backward routing deterministic.
template <typename Scalar>
Tensor5<Scalar> maxpool2(const Tensor5<Scalar>& input, MaxPool2Context<Scalar>* ctx = nullptr) {
    const Shape3& e = input.extent;
    if (e.nx % 2 || e.ny % 2 || e.nz % 2)
        throw std::invalid_argument("maxpool2: spatial extents must be even, got " + e.str());
    const Shape3 oe{e.nx / 2, e.ny / 2, e.nz / 2};
    Tensor5<Scalar> out = Tensor5<Scalar>::zeros(input.batch, input.channels, oe);
    if (ctx) {
        ctx->batch = input.batch;
        ctx->channels = input.channels;
        ctx->in_extent = e;
        ctx->argmax.assign(out.values.size(), 0);
    }
    const int tasks = input.batch * input.channels;
    const int iny = int(e.ny), inz = int(e.nz);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tasks; ++t) {
        const int b = t / input.channels;
        const int c = t % input.channels;
        const Scalar* in = input.channel(b, c);
        Scalar* o = out.channel(b, c);
        std::uint32_t* am = ctx ? ctx->argmax.data() + (std::size_t(b) * input.channels + c) * oe.voxels()
                                : nullptr;
        std::size_t oi = 0;
        for (std::uint32_t x = 0; x < oe.nx; ++x)
            for (std::uint32_t y = 0; y < oe.ny; ++y)
                for (std::uint32_t z = 0; z < oe.nz; ++z, ++oi) {
                    const std::size_t base = (std::size_t(2 * x) * iny + 2 * y) * inz + 2 * z;
                    std::size_t best = base;
                    Scalar bv = in[base];
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz) {
                                const std::size_t idx =
                                    base + (std::size_t(dx) * iny + dy) * inz + dz;
                                if (in[idx] > bv) {
                                    bv = in[idx];
                                    best = idx;
                                }
                            }
                    o[oi] = bv;
                    if (am)
                        am[oi] = std::uint32_t(best);
                }
    }
    return out;
}

template <typename Scalar>
Tensor5<Scalar> maxpool2_backward(const Tensor5<Scalar>& grad_out,
                                  const MaxPool2Context<Scalar>& ctx) {
    const Shape3 oe{ctx.in_extent.nx / 2, ctx.in_extent.ny / 2, ctx.in_extent.nz / 2};
    if (grad_out.batch != ctx.batch || grad_out.channels != ctx.channels ||
        !(grad_out.extent == oe) || ctx.argmax.size() != grad_out.values.size())
        throw std::invalid_argument("maxpool2_backward: gradient dims " + grad_out.dims_str() +
                                    " do not match pooled forward output");
    Tensor5<Scalar> g = Tensor5<Scalar>::zeros(ctx.batch, ctx.channels, ctx.in_extent);
    const int tasks = ctx.batch * ctx.channels;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tasks; ++t) {
        const int b = t / ctx.channels;
        const int c = t % ctx.channels;
        const Scalar* go = grad_out.channel(b, c);
        Scalar* gi = g.channel(b, c);
        const std::uint32_t* am = ctx.argmax.data() + (std::size_t(b) * ctx.channels + c) * oe.voxels();
        const std::size_t n = oe.voxels();
        for (std::size_t v = 0; v < n; ++v)
            gi[am[v]] += go[v];
    }
    return g;
}

// Nearest-neighbor doubling: every voxel is replicated into a 2x2x2 block.
template <typename Scalar>
Tensor5<Scalar> upsample2(const Tensor5<Scalar>& input) {
    const Shape3& e = input.extent;
    const Shape3 oe{e.nx * 2, e.ny * 2, e.nz * 2};
    Tensor5<Scalar> out = Tensor5<Scalar>::zeros(input.batch, input.channels, oe);
    const int tasks = input.batch * input.channels;
    const int iny = int(e.ny), inz = int(e.nz);
    const int ony = int(oe.ny), onz = int(oe.nz);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tasks; ++t) {
        const int b = t / input.channels;
        const int c = t % input.channels;
        const Scalar* in = input.channel(b, c);
        Scalar* o = out.channel(b, c);
        for (std::uint32_t x = 0; x < oe.nx; ++x)
            for (std::uint32_t y = 0; y < oe.ny; ++y) {
                Scalar* orow = o + (std::size_t(x) * ony + y) * onz;
                const Scalar* irow = in + (std::size_t(x / 2) * iny + y / 2) * inz;
                for (std::uint32_t z = 0; z < oe.nz; ++z)
                    orow[z] = irow[z / 2];
            }
    }
    return out;
}

// Backward of replication: each source voxel receives the sum of its 8 copies.
template <typename Scalar>
Tensor5<Scalar> upsample2_backward(const Tensor5<Scalar>& grad_out) {
    const Shape3& e = grad_out.extent;
    if (e.nx % 2 || e.ny % 2 || e.nz % 2)
        throw std::invalid_argument("upsample2_backward: gradient extents must be even, got " +
                                    e.str());
    const Shape3 oe{e.nx / 2, e.ny / 2, e.nz / 2};
    Tensor5<Scalar> g = Tensor5<Scalar>::zeros(grad_out.batch, grad_out.channels, oe);
    const int tasks = grad_out.batch * grad_out.channels;
    const int gny = int(e.ny), gnz = int(e.nz);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < tasks; ++t) {
        const int b = t / grad_out.channels;
        const int c = t % grad_out.channels;
        const Scalar* go = grad_out.channel(b, c);
        Scalar* gi = g.channel(b, c);
        std::size_t oi = 0;
        for (std::uint32_t x = 0; x < oe.nx; ++x)
            for (std::uint32_t y = 0; y < oe.ny; ++y)
                for (std::uint32_t z = 0; z < oe.nz; ++z, ++oi) {
                    Scalar acc = Scalar(0);
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz)
                                acc += go[(std::size_t(2 * x + dx) * gny + (2 * y + dy)) * gnz +
                                          (2 * z + dz)];
                    gi[oi] = acc;
                }
    }
    return g;
}

// Stacks channels as [a-channels, b-channels].
template <typename Scalar>
Tensor5<Scalar> concat_channels(const Tensor5<Scalar>& a, const Tensor5<Scalar>& b) {
    if (a.batch != b.batch || !(a.extent == b.extent))
        throw std::invalid_argument("concat_channels: dims " + a.dims_str() + " vs " +
                                    b.dims_str());
    Tensor5<Scalar> out = Tensor5<Scalar>::zeros(a.batch, a.channels + b.channels, a.extent);
    const std::size_t slab = a.extent.voxels();
    for (int bi = 0; bi < a.batch; ++bi) {
        for (int c = 0; c < a.channels; ++c)
            std::copy_n(a.channel(bi, c), slab, out.channel(bi, c));
        for (int c = 0; c < b.channels; ++c)
            std::copy_n(b.channel(bi, c), slab, out.channel(bi, a.channels + c));
    }
    return out;
}

// Splits the gradient back into the two concatenated operands.
template <typename Scalar>
std::pair<Tensor5<Scalar>, Tensor5<Scalar>> concat_channels_backward(const Tensor5<Scalar>& grad_out,
                                                                     int channels_a) {
    if (channels_a < 1 || channels_a >= grad_out.channels)
        throw std::invalid_argument("concat_channels_backward: bad split at " +
                                    std::to_string(channels_a) + " of " +
                                    std::to_string(grad_out.channels) + " channels");
    const int channels_b = grad_out.channels - channels_a;
    Tensor5<Scalar> ga = Tensor5<Scalar>::zeros(grad_out.batch, channels_a, grad_out.extent);
    Tensor5<Scalar> gb = Tensor5<Scalar>::zeros(grad_out.batch, channels_b, grad_out.extent);
    const std::size_t slab = grad_out.extent.voxels();
    for (int bi = 0; bi < grad_out.batch; ++bi) {
        for (int c = 0; c < channels_a; ++c)
            std::copy_n(grad_out.channel(bi, c), slab, ga.channel(bi, c));
        for (int c = 0; c < channels_b; ++c)
            std::copy_n(grad_out.channel(bi, channels_a + c), slab, gb.channel(bi, c));
    }
    return {std::move(ga), std::move(gb)};
}

template <typename Scalar>
struct SoftmaxContext {
    Tensor5<Scalar> output;
};

// Channel softmax with max-shift stabilization; per-voxel sums are 1 within
// rounding.
template <typename Scalar>
Tensor5<Scalar> softmax_channels(const Tensor5<Scalar>& input, SoftmaxContext<Scalar>* ctx = nullptr) {
    if (input.channels < 2)
        throw std::invalid_argument("softmax_channels: needs >= 2 channels");
    Tensor5<Scalar> out = Tensor5<Scalar>::zeros(input.batch, input.channels, input.extent);
    const std::size_t slab = input.extent.voxels();
    const int C = input.channels;
    for (int b = 0; b < input.batch; ++b) {
        const Scalar* in0 = input.channel(b, 0);
        Scalar* out0 = out.channel(b, 0);
        const std::int64_t n = std::int64_t(slab);
#pragma omp parallel for schedule(static)
        for (std::int64_t v = 0; v < n; ++v) {
            Scalar m = in0[v];
            for (int c = 1; c < C; ++c)
                m = std::max(m, in0[std::size_t(c) * slab + v]);
            Scalar sum = Scalar(0);
            for (int c = 0; c < C; ++c) {
                const Scalar e = std::exp(in0[std::size_t(c) * slab + v] - m);
                out0[std::size_t(c) * slab + v] = e;
                sum += e;
            }
            const Scalar inv = Scalar(1) / sum;
            for (int c = 0; c < C; ++c)
                out0[std::size_t(c) * slab + v] *= inv;
        }
    }
    if (ctx)
        ctx->output = out;
    debug_check_finite(out, "softmax_channels");
    return out;
}

// Per-voxel Jacobian product: gin_c = s_c * (g_c - sum_k g_k s_k).
template <typename Scalar>
Tensor5<Scalar> softmax_backward(const Tensor5<Scalar>& grad_out, const SoftmaxContext<Scalar>& ctx) {
    const Tensor5<Scalar>& s = ctx.output;
    if (!grad_out.same_dims(s))
        throw std::invalid_argument("softmax_backward: gradient dims " + grad_out.dims_str() +
                                    " do not match softmax output " + s.dims_str());
    Tensor5<Scalar> g = Tensor5<Scalar>::zeros(s.batch, s.channels, s.extent);
    const std::size_t slab = s.extent.voxels();
    const int C = s.channels;
    for (int b = 0; b < s.batch; ++b) {
        const Scalar* sv = s.channel(b, 0);
        const Scalar* gv = grad_out.channel(b, 0);
        Scalar* out = g.channel(b, 0);
        const std::int64_t n = std::int64_t(slab);
#pragma omp parallel for schedule(static)
        for (std::int64_t v = 0; v < n; ++v) {
            Scalar dot = Scalar(0);
            for (int c = 0; c < C; ++c)
                dot += gv[std::size_t(c) * slab + v] * sv[std::size_t(c) * slab + v];
            for (int c = 0; c < C; ++c) {
                const std::size_t idx = std::size_t(c) * slab + v;
                out[idx] = sv[idx] * (gv[idx] - dot);
            }
        }
    }
    return g;
}

} // namespace voxseg
