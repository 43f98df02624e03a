#include "ddcls/ops.hpp"

#include "ddcls/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <thread>

namespace ddcls {

namespace {

std::string dims(std::size_t a, std::size_t b) { return std::to_string(a) + " vs " + std::to_string(b); }

void check_conv(const Tensor& input, const ConvParams& p)
{
    if (p.weight.h() != p.weight.w())
        throw ShapeError("conv2d: kernel must be square, got " + p.weight.shape().str());
    if (p.stride == 0)
        throw ShapeError("conv2d: stride must be positive");
    if (input.c() != p.in_channels())
        throw ShapeError("conv2d: input channels mismatch (expected " + std::to_string(p.in_channels()) +
                         ", got " + std::to_string(input.c()) + ")");
    if (p.bias && p.bias->size() != p.out_channels())
        throw ShapeError("conv2d: bias length mismatch (expected " + std::to_string(p.out_channels()) +
                         ", got " + std::to_string(p.bias->size()) + ")");
}

// Patch matrix for one image: rows are (ci, ky, kx), columns are output sites.
void im2col(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h, std::size_t out_w,
            std::span<float> cols)
{
    const std::size_t sites = out_h * out_w;
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < channels; ++ci) {
        const float* src = image.data() + ci * height * width;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx, ++row) {
                float* dst = cols.data() + row * sites;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                    float* drow = dst + oy * out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(drow, drow + out_w, 0.0f);
                        continue;
                    }
                    const float* srow = src + static_cast<std::size_t>(iy) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                        drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? 0.0f
                                                                                       : srow[ix];
                    }
                }
            }
        }
    }
}

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColTile = 256;

// out[r][p] = bias[r] + sum_k w[r][k] * cols[k][p] for rows in [row_begin, row_end).
void gemm_rows(const float* w, const float* cols, const float* bias, float* out, std::size_t k_dim,
               std::size_t sites, std::size_t row_begin, std::size_t row_end)
{
    alignas(64) std::array<float, kRowBlock * kColTile> acc;
    for (std::size_t p0 = 0; p0 < sites; p0 += kColTile) {
        const std::size_t len = std::min(kColTile, sites - p0);
        for (std::size_t r0 = row_begin; r0 < row_end; r0 += kRowBlock) {
            const std::size_t rows = std::min(kRowBlock, row_end - r0);
            for (std::size_t r = 0; r < kRowBlock; ++r) {
                const float b = (r < rows && bias) ? bias[r0 + r] : 0.0f;
                std::fill_n(acc.data() + r * kColTile, len, b);
            }
            if (rows == kRowBlock) {
                float* a0 = acc.data();
                float* a1 = a0 + kColTile;
                float* a2 = a1 + kColTile;
                float* a3 = a2 + kColTile;
                const float* w0 = w + r0 * k_dim;
                const float* w1 = w0 + k_dim;
                const float* w2 = w1 + k_dim;
                const float* w3 = w2 + k_dim;
                for (std::size_t k = 0; k < k_dim; ++k) {
                    const float* c = cols + k * sites + p0;
                    const float v0 = w0[k], v1 = w1[k], v2 = w2[k], v3 = w3[k];
                    for (std::size_t j = 0; j < len; ++j) {
                        const float x = c[j];
                        a0[j] += v0 * x;
                        a1[j] += v1 * x;
                        a2[j] += v2 * x;
                        a3[j] += v3 * x;
                    }
                }
            } else {
                for (std::size_t r = 0; r < rows; ++r) {
                    float* a = acc.data() + r * kColTile;
                    const float* wr = w + (r0 + r) * k_dim;
                    for (std::size_t k = 0; k < k_dim; ++k) {
                        const float* c = cols + k * sites + p0;
                        const float v = wr[k];
                        for (std::size_t j = 0; j < len; ++j)
                            a[j] += v * c[j];
                    }
                }
            }
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(acc.data() + r * kColTile, len, out + (r0 + r) * sites + p0);
        }
    }
}

} // namespace

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding)
{
    if (stride == 0 || in + 2 * padding < kernel)
        throw ShapeError("conv2d: input extent " + std::to_string(in) + " with padding " + std::to_string(padding) +
                         " is smaller than kernel " + std::to_string(kernel));
    return (in + 2 * padding - kernel) / stride + 1;
}

namespace ops {

Tensor conv2d(const Tensor& input, const ConvParams& p)
{
    check_conv(input, p);
    const std::size_t k = p.kernel();
    const std::size_t out_h = conv_out_dim(input.h(), k, p.stride, p.padding);
    const std::size_t out_w = conv_out_dim(input.w(), k, p.stride, p.padding);
    Tensor out(input.n(), p.out_channels(), out_h, out_w);
    const auto pad = static_cast<std::ptrdiff_t>(p.padding);
    const auto in_h = static_cast<std::ptrdiff_t>(input.h());
    const auto in_w = static_cast<std::ptrdiff_t>(input.w());

    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t co = 0; co < p.out_channels(); ++co) {
            const float b = p.bias ? (*p.bias)[co] : 0.0f;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    float acc = 0.0f;
                    for (std::size_t ci = 0; ci < input.c(); ++ci) {
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
                            if (iy < 0 || iy >= in_h)
                                continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
                                if (ix < 0 || ix >= in_w)
                                    continue;
                                acc += input.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                       p.weight.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.at(n, co, oy, ox) = acc + b;
                }
            }
        }
    }
    return out;
}

Tensor conv2d_lowered(const Tensor& input, const ConvParams& p, unsigned threads)
{
    check_conv(input, p);
    const std::size_t k = p.kernel();
    const std::size_t out_h = conv_out_dim(input.h(), k, p.stride, p.padding);
    const std::size_t out_w = conv_out_dim(input.w(), k, p.stride, p.padding);
    const std::size_t sites = out_h * out_w;
    const std::size_t k_dim = p.in_channels() * k * k;
    const std::size_t c_out = p.out_channels();
    Tensor out(input.n(), c_out, out_h, out_w);

    // A pointwise stride-1 convolution reads the input plane directly as its patch matrix.
    const bool direct = k == 1 && p.stride == 1 && p.padding == 0;
    std::vector<float> cols(direct ? 0 : k_dim * sites);
    const float* bias = p.bias ? p.bias->data() : nullptr;

    for (std::size_t n = 0; n < input.n(); ++n) {
        const auto image = input.data().subspan(n * input.c() * input.h() * input.w(),
                                                input.c() * input.h() * input.w());
        if (!direct)
            im2col(image, input.c(), input.h(), input.w(), k, p.stride, p.padding, out_h, out_w, cols);
        const float* patches = direct ? image.data() : cols.data();
        float* dst = out.data().data() + n * c_out * sites;

        const std::size_t blocks = (c_out + kRowBlock - 1) / kRowBlock;
        const std::size_t workers = std::clamp<std::size_t>(threads, 1, blocks);
        if (workers == 1) {
            gemm_rows(p.weight.data().data(), patches, bias, dst, k_dim, sites, 0, c_out);
            continue;
        }
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            const std::size_t begin = std::min(c_out, (blocks * t / workers) * kRowBlock);
            const std::size_t end = std::min(c_out, (blocks * (t + 1) / workers) * kRowBlock);
            pool.emplace_back([&, begin, end] {
                gemm_rows(p.weight.data().data(), patches, bias, dst, k_dim, sites, begin, end);
            });
        }
    }
    return out;
}

Tensor batchnorm_infer(const Tensor& input, const BnParams& bn)
{
    const std::size_t c = bn.channels();
    if (bn.beta.size() != c || bn.running_mean.size() != c || bn.running_var.size() != c)
        throw ShapeError("batchnorm: parameter vectors differ in length");
    if (input.c() != c)
        throw ShapeError("batchnorm: channel mismatch (" + dims(input.c(), c) + ")");
    Tensor out = input;
    for (std::size_t n = 0; n < input.n(); ++n) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float inv_std = 1.0f / std::sqrt(bn.running_var[ch] + bn.eps);
            for (float& v : out.plane(n, ch))
                v = (v - bn.running_mean[ch]) * inv_std * bn.gamma[ch] + bn.beta[ch];
        }
    }
    return out;
}

ConvParams fold_bn(const ConvParams& p, const BnParams& bn)
{
    const std::size_t c = bn.channels();
    if (bn.beta.size() != c || bn.running_mean.size() != c || bn.running_var.size() != c)
        throw ShapeError("fold_bn: parameter vectors differ in length");
    if (p.out_channels() != c)
        throw ShapeError("fold_bn: conv output channels vs batchnorm length (" + dims(p.out_channels(), c) + ")");

    ConvParams folded = p;
    std::vector<float> bias(c);
    const std::size_t per_out = p.in_channels() * p.kernel() * p.kernel();
    auto w = folded.weight.data();
    for (std::size_t co = 0; co < c; ++co) {
        const float scale = bn.gamma[co] / std::sqrt(bn.running_var[co] + bn.eps);
        for (std::size_t i = 0; i < per_out; ++i)
            w[co * per_out + i] *= scale;
        const float b = p.bias ? (*p.bias)[co] : 0.0f;
        bias[co] = (b - bn.running_mean[co]) * scale + bn.beta[co];
    }
    folded.bias = std::move(bias);
    return folded;
}

void silu_inplace(Tensor& t)
{
    for (float& v : t.data())
        v = v / (1.0f + std::exp(-v));
}

Tensor silu(const Tensor& input)
{
    Tensor out = input;
    silu_inplace(out);
    return out;
}

std::vector<float> softmax(std::span<const float> logits)
{
    if (logits.empty())
        throw ShapeError("softmax: empty input");
    const float peak = *std::max_element(logits.begin(), logits.end());
    std::vector<float> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        sum += out[i];
    }
    for (float& v : out)
        v = static_cast<float>(v / sum);
    return out;
}

Tensor global_avg_pool(const Tensor& input)
{
    if (input.h() == 0 || input.w() == 0)
        throw ShapeError("global_avg_pool: empty spatial extent " + input.shape().str());
    Tensor out(input.n(), input.c(), 1, 1);
    const auto count = static_cast<float>(input.shape().plane());
    for (std::size_t n = 0; n < input.n(); ++n)
        for (std::size_t c = 0; c < input.c(); ++c) {
            const auto plane = input.plane(n, c);
            out.at(n, c, 0, 0) = std::accumulate(plane.begin(), plane.end(), 0.0f) / count;
        }
    return out;
}

std::vector<float> linear(std::span<const float> input, const Tensor& weight, std::span<const float> bias)
{
    const std::size_t d_out = weight.n();
    const std::size_t d_in = weight.c() * weight.h() * weight.w();
    if (input.size() != d_in)
        throw ShapeError("linear: input length " + dims(input.size(), d_in) + " expected");
    if (bias.size() != d_out)
        throw ShapeError("linear: bias length " + dims(bias.size(), d_out) + " expected");
    std::vector<float> out(d_out);
    const auto w = weight.data();
    for (std::size_t o = 0; o < d_out; ++o) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < d_in; ++i)
            acc += w[o * d_in + i] * input[i];
        out[o] = acc + bias[o];
    }
    return out;
}

Tensor concat_channels(std::span<const Tensor> parts)
{
    if (parts.empty())
        throw ShapeError("concat_channels: no inputs");
    const Shape& first = parts.front().shape();
    std::size_t channels = 0;
    for (const Tensor& t : parts) {
        if (t.n() != first.n || t.h() != first.h || t.w() != first.w)
            throw ShapeError("concat_channels: " + t.shape().str() + " does not match " + first.str() +
                             " outside the channel axis");
        channels += t.c();
    }
    Tensor out(first.n, channels, first.h, first.w);
    const std::size_t plane = first.plane();
    auto dst = out.data().begin();
    for (std::size_t n = 0; n < first.n; ++n)
        for (const Tensor& t : parts) {
            const auto src = t.data().subspan(n * t.c() * plane, t.c() * plane);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> parts)
{
    if (std::accumulate(parts.begin(), parts.end(), std::size_t{0}) != t.c())
        throw ShapeError("split_channels: parts do not sum to " + std::to_string(t.c()) + " channels");
    const std::size_t plane = t.shape().plane();
    std::vector<Tensor> out;
    out.reserve(parts.size());
    std::size_t offset = 0;
    for (std::size_t c : parts) {
        Tensor piece(t.n(), c, t.h(), t.w());
        for (std::size_t n = 0; n < t.n(); ++n) {
            const auto src = t.data().subspan((n * t.c() + offset) * plane, c * plane);
            std::copy(src.begin(), src.end(), piece.data().begin() + static_cast<std::ptrdiff_t>(n * c * plane));
        }
        out.push_back(std::move(piece));
        offset += c;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = a;
    auto dst = out.data();
    const auto src = b.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += src[i];
    return out;
}

} // namespace ops
} // namespace ddcls
