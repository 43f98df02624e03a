#pragma once

#include "ddcls/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ddcls::image {

/// 8-bit interleaved RGB.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t ch) { return rgb[(y * width + x) * 3 + ch]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t ch) const { return rgb[(y * width + x) * 3 + ch]; }
};

/// JPEG, PNG or binary PPM (P6). Throws ImageError when the bytes cannot be decoded.
Image decode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// True when the leading bytes carry a supported image signature.
bool has_image_signature(std::span<const std::uint8_t> head);

std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);

/// Planar float image (1, 3, h, w) with raw 0..255 values.
Tensor to_tensor(const Image& img);

/// Bilinear resize with half-pixel centers and edge clamping; same-size resize is exact.
Tensor resize_bilinear(const Tensor& t, std::size_t out_h, std::size_t out_w);

/// Model input: decode, resize to size x size (aspect not kept), scale to [0, 1].
Tensor preprocess(std::span<const std::uint8_t> bytes, std::size_t size = 224);
Tensor preprocess(const Image& img, std::size_t size = 224);

} // namespace ddcls::image
