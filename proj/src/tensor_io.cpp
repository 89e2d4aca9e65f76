#include "pandiff/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "pandiff/error.hpp"

namespace pandiff {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'E', 'N', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const ImageTensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + 4 * t.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(0);  // f32
  out.push_back(3);
  put_u32(out, static_cast<std::uint32_t>(t.bands()));
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ImageTensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("bad magic");
  }
  if (bytes.size() < kTensorHeaderBytes) throw ParseError("truncated header");
  if (bytes[4] != 0) throw ParseError("unsupported dtype code " + std::to_string(bytes[4]));
  if (bytes[5] != 3) throw ParseError("unsupported ndim " + std::to_string(bytes[5]));
  const std::uint32_t c = get_u32(&bytes[6]);
  const std::uint32_t h = get_u32(&bytes[10]);
  const std::uint32_t width = get_u32(&bytes[14]);
  if (c == 0 || h == 0 || width == 0) throw ParseError("zero dimension in header");
  const std::uint64_t count = std::uint64_t(c) * h * width;
  if (bytes.size() < kTensorHeaderBytes + 4 * count) {
    throw ParseError("truncated payload: expected " + std::to_string(4 * count) + " bytes, got " +
                     std::to_string(bytes.size() - kTensorHeaderBytes));
  }
  if (bytes.size() > kTensorHeaderBytes + 4 * count) throw ParseError("trailing bytes after payload");
  std::vector<float> data(count);
  const std::uint8_t* p = bytes.data() + kTensorHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i, p += 4) {
    data[i] = std::bit_cast<float>(get_u32(p));
    if (!std::isfinite(data[i])) {
      throw ParseError("non-finite value at element " + std::to_string(i));
    }
  }
  return ImageTensor(static_cast<int>(c), static_cast<int>(h), static_cast<int>(width),
                     std::move(data));
}

void write_tensor(const ImageTensor& t, const fs::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

ImageTensor read_tensor(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

namespace {

std::string dims(const ImageTensor& t) { return t.dims_string(); }

void check_entry(const DatasetManifest& m, std::size_t i) {
  const auto s = load_sample(m, i);
  const int r = m.scale_ratio;
  std::ostringstream err;
  if (s.pan.bands() != 1) err << "pan bands expected 1, got " << s.pan.bands() << "; ";
  if (s.pan.height() != s.lrms_up.height() || s.pan.width() != s.lrms_up.width()) {
    err << "pan " << dims(s.pan) << " vs lrms " << dims(s.lrms_up) << "; ";
  }
  if (s.pan.height() != r * s.ms.height() || s.pan.width() != r * s.ms.width()) {
    err << "pan " << s.pan.height() << "x" << s.pan.width() << " expected "
        << r * s.ms.height() << "x" << r * s.ms.width() << " (ratio " << r << " x ms "
        << dims(s.ms) << "); ";
  }
  if (s.lrms_up.bands() != s.ms.bands()) {
    err << "lrms bands " << s.lrms_up.bands() << " vs ms bands " << s.ms.bands() << "; ";
  }
  if (s.gt && !s.gt->same_dims(s.lrms_up)) {
    err << "gt " << dims(*s.gt) << " expected " << dims(s.lrms_up) << "; ";
  }
  const auto msg = err.str();
  if (!msg.empty()) {
    throw InvalidArgument("manifest entry " + std::to_string(i) + ": dimension mismatch: " + msg);
  }
}

fs::path resolve(const fs::path& root, const fs::path& p) { return p.is_absolute() ? p : root / p; }

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.split = split_from_string(j.value("split", "train"));
    m.scale_ratio = j.value("scale_ratio", 4);
    if (m.scale_ratio < 1) throw ParseError("scale_ratio must be >= 1");
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.pan = resolve(m.root, e.at("pan").get<std::string>());
      entry.lrms = resolve(m.root, e.at("lrms").get<std::string>());
      entry.ms = resolve(m.root, e.at("ms").get<std::string>());
      if (e.contains("gt") && !e["gt"].is_null()) {
        entry.gt = resolve(m.root, e["gt"].get<std::string>());
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < m.entries.size(); ++i) check_entry(m, i);
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path dir = path.parent_path();
  auto rel = [&](const fs::path& p) {
    auto r = p.lexically_relative(dir);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je{{"pan", rel(e.pan)}, {"lrms", rel(e.lrms)}, {"ms", rel(e.ms)}};
    if (e.gt) je["gt"] = rel(*e.gt);
    entries.push_back(std::move(je));
  }
  json j{{"split", to_string(m.split)}, {"scale_ratio", m.scale_ratio}, {"entries", entries}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path.string());
  f << j.dump(2) << "\n";
}

FusionSample load_sample(const DatasetManifest& m, std::size_t index) {
  const auto& e = m.entries.at(index);
  FusionSample s;
  s.pan = read_tensor(e.pan);
  s.lrms_up = read_tensor(e.lrms);
  s.ms = read_tensor(e.ms);
  if (e.gt) s.gt = read_tensor(*e.gt);
  return s;
}

}  // namespace pandiff
