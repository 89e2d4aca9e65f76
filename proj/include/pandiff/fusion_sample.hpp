#pragma once

#include <optional>

#include "pandiff/image_tensor.hpp"

namespace pandiff {

// An aligned pansharpening group: PAN and upsampled LrMS share the fine grid,
// MS sits on the coarse grid (scale ratio 4), gt is the HRMS when known.
struct FusionSample {
  ImageTensor pan;      // (1, H, W)
  ImageTensor lrms_up;  // (C, H, W)
  ImageTensor ms;       // (C, H/r, W/r)
  std::optional<ImageTensor> gt;  // (C, H, W)
};

// Throws InvalidArgument on any shape inconsistency.
void validate_sample(const FusionSample& s, int scale_ratio = 4);

}  // namespace pandiff
