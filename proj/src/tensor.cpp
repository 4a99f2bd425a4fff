#include "mambavsr/tensor.hpp"

#include "mambavsr/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace mvsr {

std::size_t numel(const Shape& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0)
            throw ShapeError("negative extent in shape " + to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string to_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values))
{
    if (numel(shape_) != data_.size())
        throw ShapeError("tensor payload of " + std::to_string(data_.size()) +
                         " values does not match shape " + to_string(shape_));
}

int Tensor::dim(int axis) const
{
    const int r = rank();
    if (axis < 0)
        axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis out of range for shape " + to_string(shape_));
    return shape_[axis];
}

Tensor Tensor::reshape(Shape shape) const&
{
    Tensor copy = *this;
    return std::move(copy).reshape(std::move(shape));
}

Tensor Tensor::reshape(Shape shape) &&
{
    if (numel(shape) != data_.size())
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::fill(float v)
{
    std::fill(data_.begin(), data_.end(), v);
}

bool identical(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        return false;
    return a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void require_finite(const Tensor& t, std::string_view where)
{
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i]))
            throw NumericError(std::string(where) + ": non-finite value at flat index " +
                               std::to_string(i));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view where)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(where) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
}

} // namespace mvsr
