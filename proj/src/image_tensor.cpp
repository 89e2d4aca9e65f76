#include "pandiff/image_tensor.hpp"

#include <algorithm>
#include <sstream>

#include "pandiff/error.hpp"
#include "pandiff/fusion_sample.hpp"

namespace pandiff {

namespace {

std::size_t checked_count(int bands, int height, int width) {
  if (bands <= 0 || height <= 0 || width <= 0) {
    throw InvalidArgument("ImageTensor dims must be positive");
  }
  return static_cast<std::size_t>(bands) * height * width;
}

}  // namespace

ImageTensor::ImageTensor(int bands, int height, int width, float fill, ValueRange range)
    : bands_(bands), height_(height), width_(width),
      data_(checked_count(bands, height, width), fill), range_(range) {}

ImageTensor::ImageTensor(int bands, int height, int width, std::vector<float> data, ValueRange range)
    : bands_(bands), height_(height), width_(width), data_(std::move(data)), range_(range) {
  if (data_.size() != checked_count(bands, height, width)) {
    throw InvalidArgument("ImageTensor data length does not match " + dims_string());
  }
}

std::string ImageTensor::dims_string() const {
  std::ostringstream os;
  os << bands_ << "x" << height_ << "x" << width_;
  return os.str();
}

void require_same_dims(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_dims(b)) {
    throw InvalidArgument(std::string(what) + ": dim mismatch " + a.dims_string() + " vs " +
                          b.dims_string());
  }
}

ImageTensor operator+(const ImageTensor& a, const ImageTensor& b) {
  require_same_dims(a, b, "operator+");
  ImageTensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

ImageTensor operator-(const ImageTensor& a, const ImageTensor& b) {
  require_same_dims(a, b, "operator-");
  ImageTensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

ImageTensor concat_bands(std::span<const ImageTensor> parts) {
  if (parts.empty()) throw InvalidArgument("concat_bands: no inputs");
  int bands = 0;
  for (const auto& p : parts) {
    if (p.height() != parts[0].height() || p.width() != parts[0].width()) {
      throw InvalidArgument("concat_bands: spatial mismatch " + p.dims_string() + " vs " +
                            parts[0].dims_string());
    }
    bands += p.bands();
  }
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(bands) * parts[0].plane_size());
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return ImageTensor(bands, parts[0].height(), parts[0].width(), std::move(data),
                     parts[0].range_hint());
}

ImageTensor slice_bands(const ImageTensor& t, int first, int count) {
  if (first < 0 || count <= 0 || first + count > t.bands()) {
    throw InvalidArgument("slice_bands: range out of bounds for " + t.dims_string());
  }
  auto begin = t.storage().begin() + static_cast<std::ptrdiff_t>(first * t.plane_size());
  std::vector<float> data(begin, begin + static_cast<std::ptrdiff_t>(count * t.plane_size()));
  return ImageTensor(count, t.height(), t.width(), std::move(data), t.range_hint());
}

void clip_to(ImageTensor& t, ValueRange r) {
  for (float& v : t.data()) v = std::clamp(v, r.lo, r.hi);
}

void validate_sample(const FusionSample& s, int scale_ratio) {
  const auto& pan = s.pan;
  const auto& lr = s.lrms_up;
  const auto& ms = s.ms;
  std::ostringstream err;
  if (pan.bands() != 1) err << "pan must have 1 band, got " << pan.bands() << "; ";
  if (pan.height() != lr.height() || pan.width() != lr.width()) {
    err << "pan " << pan.dims_string() << " vs lrms " << lr.dims_string() << "; ";
  }
  if (lr.bands() != ms.bands() || lr.height() != scale_ratio * ms.height() ||
      lr.width() != scale_ratio * ms.width()) {
    err << "lrms " << lr.dims_string() << " expected " << ms.bands() << "x"
        << scale_ratio * ms.height() << "x" << scale_ratio * ms.width() << " from ms "
        << ms.dims_string() << "; ";
  }
  if (s.gt && !s.gt->same_dims(lr)) {
    err << "gt " << s.gt->dims_string() << " expected " << lr.dims_string() << "; ";
  }
  const std::string msg = err.str();
  if (!msg.empty()) throw InvalidArgument("inconsistent fusion sample: " + msg);
}

}  // namespace pandiff
