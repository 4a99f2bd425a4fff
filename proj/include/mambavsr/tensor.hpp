#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mvsr {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major f32 array. Dimension order is documented per op,
// typically [C,H,W] for a feature map and [L,C] for a token sequence.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int i, int j) { return data_[offset2(i, j)]; }
    float at(int i, int j) const { return data_[offset2(i, j)]; }
    float& at(int i, int j, int k) { return data_[offset3(i, j, k)]; }
    float at(int i, int j, int k) const { return data_[offset3(i, j, k)]; }
    float& at(int i, int j, int k, int l) { return data_[offset4(i, j, k, l)]; }
    float at(int i, int j, int k, int l) const { return data_[offset4(i, j, k, l)]; }

    Tensor reshape(Shape shape) const&;
    Tensor reshape(Shape shape) &&;

    bool all_finite() const noexcept;
    void fill(float v);

private:
    std::size_t offset2(int i, int j) const
    {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t offset3(int i, int j, int k) const
    {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t offset4(int i, int j, int k, int l) const
    {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    Shape shape_;
    std::vector<float> data_;
};

// Bitwise equality of shape and payload (distinguishes -0.0f from 0.0f).
bool identical(const Tensor& a, const Tensor& b);

float max_abs_diff(const Tensor& a, const Tensor& b);

// Throws NumericError naming `where` if any value is NaN or Inf.
void require_finite(const Tensor& t, std::string_view where);
void require_same_shape(const Tensor& a, const Tensor& b, std::string_view where);

} // namespace mvsr
