#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvr {

/// Dense row-major H x W x C raster. Channels are interleaved (channel index fastest).
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height < 0 || width < 0 || channels < 1) {
      throw std::invalid_argument("Image: invalid dimensions");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col, int ch = 0) {
    assert(row >= 0 && row < height_ && col >= 0 && col < width_ && ch >= 0 && ch < channels_);
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  const T& operator()(int row, int col, int ch = 0) const {
    assert(row >= 0 && row < height_ && col >= 0 && col < width_ && ch >= 0 && ch < channels_);
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_extent(const Image<auto>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Image& a, const Image& b) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using ImageF = Image<float>;
using Mask = Image<std::uint8_t>;
using IdImage = Image<std::uint64_t>;

}  // namespace mvr
