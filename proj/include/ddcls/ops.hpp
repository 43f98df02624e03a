#pragma once

// Layer kernels for the classifier graph. Every function is pure: inputs are
// never modified and the result is a freshly allocated tensor.

#include "ddcls/tensor.hpp"

#include <optional>
#include <span>
#include <vector>

namespace ddcls {

struct ConvParams {
    Tensor weight;                     // (c_out, c_in, k, k)
    std::optional<std::vector<float>> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_channels() const { return weight.n(); }
    std::size_t in_channels() const { return weight.c(); }
    std::size_t kernel() const { return weight.h(); }
};

struct BnParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float eps = 1e-3f;

    std::size_t channels() const { return gamma.size(); }
};

/// Output spatial extent of a convolution; throws ShapeError when it would be < 1.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

namespace ops {

/// Direct convolution: one dot product per output site.
Tensor conv2d(const Tensor& input, const ConvParams& p);

/// Same contract as conv2d, computed by lowering receptive fields into a patch
/// matrix and multiplying by the (c_out x c_in*k*k) weight matrix. `threads`
/// splits output channels across workers; results do not depend on it.
Tensor conv2d_lowered(const Tensor& input, const ConvParams& p, unsigned threads = 1);

Tensor batchnorm_infer(const Tensor& input, const BnParams& bn);

/// Absorbs inference batch-norm into the convolution. The result always carries a bias.
ConvParams fold_bn(const ConvParams& p, const BnParams& bn);

Tensor silu(const Tensor& input);
void silu_inplace(Tensor& t);

/// Numerically stable softmax (max subtraction). Throws ShapeError on empty input.
std::vector<float> softmax(std::span<const float> logits);

Tensor global_avg_pool(const Tensor& input);

/// y = W x + b with W shaped (d_out, d_in, 1, 1).
std::vector<float> linear(std::span<const float> input, const Tensor& weight, std::span<const float> bias);

Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> parts);
Tensor add(const Tensor& a, const Tensor& b);

} // namespace ops
} // namespace ddcls
