#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppa {

/// Raised when an operation's precondition on shapes, ranges or indices is
/// not met by the caller.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for inputs at which a quantity is mathematically undefined
/// (e.g. all-zero logits for the Poincare loss).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// H x W x C image, row-major with interleaved channels. Pixel values are
/// expected in [-1, 1]; `in_range` checks it.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Shape shape, double fill = 0.0);
  ImageTensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t row, std::size_t col, std::size_t ch) {
    return data_[(row * shape_.width + col) * shape_.channels + ch];
  }
  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * shape_.width + col) * shape_.channels + ch];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool in_range() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class LatentSpace { input, intermediate };

struct LatentVector {
  std::vector<double> values;
  LatentSpace space = LatentSpace::input;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const LatentVector&, const LatentVector&) = default;
};

using LatentBatch = std::vector<LatentVector>;

}  // namespace ppa
