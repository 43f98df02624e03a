#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ddcls {

struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t numel() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW float tensor. 2-D weight matrices use shape (out, in, 1, 1).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);
    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : Tensor(Shape{n, c, h, w}, fill)
    {
    }

    const Shape& shape() const { return shape_; }
    std::size_t n() const { return shape_.n; }
    std::size_t c() const { return shape_.c; }
    std::size_t h() const { return shape_.h; }
    std::size_t w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
    {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const
    {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    /// Contiguous view of one (n, c) plane.
    std::span<const float> plane(std::size_t n, std::size_t c) const
    {
        return std::span<const float>(data_).subspan((n * shape_.c + c) * shape_.plane(), shape_.plane());
    }
    std::span<float> plane(std::size_t n, std::size_t c)
    {
        return std::span<float>(data_).subspan((n * shape_.c + c) * shape_.plane(), shape_.plane());
    }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

} // namespace ddcls
