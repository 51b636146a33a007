#include "ppa/tensor.hpp"

#include <algorithm>

namespace ppa {

std::string to_string(const Shape& shape) {
  return std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
         std::to_string(shape.channels);
}

ImageTensor::ImageTensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
  require(shape.height > 0 && shape.width > 0 && shape.channels > 0,
          "image dimensions must be positive, got " + to_string(shape));
}

ImageTensor::ImageTensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  require(shape.height > 0 && shape.width > 0 && shape.channels > 0,
          "image dimensions must be positive, got " + to_string(shape));
  require(data_.size() == shape.size(), "image buffer holds " + std::to_string(data_.size()) +
                                            " values, shape " + to_string(shape) + " needs " +
                                            std::to_string(shape.size()));
}

bool ImageTensor::in_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= -1.0 && v <= 1.0; });
}

}  // namespace ppa
