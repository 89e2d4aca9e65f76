#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pandiff/fusion_sample.hpp"
#include "pandiff/image_tensor.hpp"

namespace pandiff {

// ".ten" layout (all little-endian):
//   "TEN1" | dtype u8 (0 = f32) | ndim u8 (3) | C u32 | H u32 | W u32 | C*H*W f32
inline constexpr std::size_t kTensorHeaderBytes = 18;

void write_tensor(const ImageTensor& t, const std::filesystem::path& path);
ImageTensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const ImageTensor& t);
ImageTensor decode_tensor(const std::vector<std::uint8_t>& bytes);

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::filesystem::path pan;
  std::filesystem::path lrms;
  std::filesystem::path ms;
  std::optional<std::filesystem::path> gt;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::train;
  int scale_ratio = 4;
  // Directory that relative entry paths are resolved against.
  std::filesystem::path root;
};

// Parses and checks every entry: files exist, decode, and the shapes satisfy
// pan == lrms == ratio * ms (and gt == lrms when present).
DatasetManifest load_manifest(const std::filesystem::path& path);
// Writes entry paths relative to the manifest directory when possible.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

FusionSample load_sample(const DatasetManifest& m, std::size_t index);

}  // namespace pandiff
