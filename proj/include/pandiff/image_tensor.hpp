#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pandiff {

struct ValueRange {
  float lo = 0.0f;
  float hi = 1.0f;
  bool operator==(const ValueRange&) const = default;
};

// Dense multi-band raster stored band-major: index = (c * height + y) * width + x.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int bands, int height, int width, float fill = 0.0f, ValueRange range = {});
  ImageTensor(int bands, int height, int width, std::vector<float> data, ValueRange range = {});

  int bands() const { return bands_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  const ValueRange& range_hint() const { return range_; }
  void set_range_hint(ValueRange r) { range_ = r; }

  float& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  float at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

  std::span<float> band(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const float> band(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  bool same_dims(const ImageTensor& o) const {
    return bands_ == o.bands_ && height_ == o.height_ && width_ == o.width_;
  }
  std::string dims_string() const;

  // Values only; the range hint is metadata.
  bool operator==(const ImageTensor& o) const { return same_dims(o) && data_ == o.data_; }

 private:
  int bands_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
  ValueRange range_{};
};

// Throws InvalidArgument naming `what` when the dims differ.
void require_same_dims(const ImageTensor& a, const ImageTensor& b, const char* what);

ImageTensor operator+(const ImageTensor& a, const ImageTensor& b);
ImageTensor operator-(const ImageTensor& a, const ImageTensor& b);

// Stacks tensors along the band axis. All inputs must share height and width.
ImageTensor concat_bands(std::span<const ImageTensor> parts);
// Copies `count` bands starting at `first`.
ImageTensor slice_bands(const ImageTensor& t, int first, int count);

void clip_to(ImageTensor& t, ValueRange r);

}  // namespace pandiff
