#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace eqtime {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles tagged with its shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() & noexcept { return data_; }
  std::span<const double> data() const& noexcept { return data_; }
  std::span<const double> data() && = delete;
  const std::vector<double>& storage() const& noexcept { return data_; }
  std::vector<double> storage() && noexcept { return std::move(data_); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  double item() const;

  void fill(double v);
  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_{0.0};
};

/// Boolean array over a tensor shape; true marks a live entry.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> live;

  Mask() = default;
  Mask(Shape s, bool fill) : shape(std::move(s)), live(shape_size(shape), fill ? 1 : 0) {}
  Mask(Shape s, std::vector<std::uint8_t> values) : shape(std::move(s)), live(std::move(values)) {}

  static Mask from(std::initializer_list<bool> values);

  std::size_t size() const noexcept { return live.size(); }
  bool operator[](std::size_t i) const { return live[i] != 0; }
  bool operator==(const Mask& other) const = default;
};

}  // namespace eqtime
