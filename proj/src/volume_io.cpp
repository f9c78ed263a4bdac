#include "sdm/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sdm {

static_assert(std::endian::native == std::endian::little,
              "raw payload I/O assumes a little-endian host");

namespace {

std::string raw_path_for(const std::string& json_path) {
  if (json_path.size() < 5 || json_path.substr(json_path.size() - 5) != ".json") {
    throw IoError("volume header path must end in .json: " + json_path);
  }
  return json_path.substr(0, json_path.size() - 5) + ".raw";
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) {
    in.read(reinterpret_cast<char*>(bytes.data()), size);
  }
  if (!in) {
    throw IoError("short read: " + path);
  }
  return bytes;
}

json header_to_json(const VolumeHeader& h) {
  return json{{"dims", {h.dims.nx, h.dims.ny, h.dims.nz}},
              {"spacing_mm", {h.spacing.dx, h.spacing.dy, h.spacing.dz}},
              {"dtype", h.elem == ElemType::U8 ? "u8" : "f32"},
              {"order", "x-fastest"}};
}

VolumeHeader header_from_json(const json& j, const std::string& path) {
  VolumeHeader h;
  try {
    const auto& dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
      throw IoError(path + ": field \"dims\" must be an array of 3 integers");
    }
    h.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    const auto& sp = j.at("spacing_mm");
    if (!sp.is_array() || sp.size() != 3) {
      throw IoError(path + ": field \"spacing_mm\" must be an array of 3 floats");
    }
    h.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype == "u8") {
      h.elem = ElemType::U8;
    } else if (dtype == "f32") {
      h.elem = ElemType::F32;
    } else {
      throw IoError(path + ": field \"dtype\" has unknown value \"" + dtype + "\"");
    }
    const std::string order = j.at("order").get<std::string>();
    if (order != "x-fastest") {
      throw IoError(path + ": field \"order\" must be \"x-fastest\", got \"" + order + "\"");
    }
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed header (" + e.what() + ")");
  }
  try {
    h.dims.validate();
    h.spacing.validate();
  } catch (const ValidationError& e) {
    throw IoError(path + ": " + e.what());
  }
  return h;
}

}  // namespace

// Write to <path>.tmp then rename, so failures never leave partial files.
void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open " + tmp + " for writing");
    }
    if (size > 0) {
      out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    }
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError("write failed: " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("rename failed: " + path + " (" + ec.message() + ")");
  }
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

RawVolume read_volume(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) {
    throw IoError("cannot open " + json_path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(json_path + ": invalid JSON (" + e.what() + ")");
  }
  RawVolume rv;
  rv.header = header_from_json(j, json_path);

  const std::string raw_path = raw_path_for(json_path);
  auto bytes = read_file_bytes(raw_path);
  if (bytes.size() != rv.header.payload_bytes()) {
    throw IoError(raw_path + ": payload size " + std::to_string(bytes.size()) +
                  " bytes does not match header \"dims\" (expected " +
                  std::to_string(rv.header.payload_bytes()) + ")");
  }
  if (rv.header.elem == ElemType::U8) {
    rv.u8 = std::move(bytes);
  } else {
    rv.f32.resize(rv.header.dims.voxels());
    std::memcpy(rv.f32.data(), bytes.data(), bytes.size());
    for (float v : rv.f32) {
      if (!std::isfinite(v)) {
        throw IoError(raw_path + ": non-finite value in \"payload\"");
      }
    }
  }
  return rv;
}

void write_volume(const std::string& json_path, const VolumeHeader& header,
                  const void* payload) {
  header.dims.validate();
  header.spacing.validate();
  const std::string header_text = header_to_json(header).dump(2) + "\n";
  // Payload first: a reader that sees the header can rely on the payload.
  write_file_atomic(raw_path_for(json_path), payload, header.payload_bytes());
  write_file_atomic(json_path, header_text.data(), header_text.size());
}

LabelVolume read_label_volume(const std::string& json_path) {
  RawVolume rv = read_volume(json_path);
  if (rv.header.elem != ElemType::U8) {
    throw IoError(json_path + ": expected dtype u8 for a label volume");
  }
  LabelVolume lv;
  lv.dims = rv.header.dims;
  lv.spacing = rv.header.spacing;
  lv.data = std::move(rv.u8);
  int max_label = 0;
  for (std::uint8_t v : lv.data) {
    max_label = std::max(max_label, int(v));
  }
  lv.num_classes = std::max(1, max_label);
  return lv;
}

ScalarVolume read_scalar_volume(const std::string& json_path) {
  RawVolume rv = read_volume(json_path);
  if (rv.header.elem != ElemType::F32) {
    throw IoError(json_path + ": expected dtype f32 for a scalar volume");
  }
  ScalarVolume sv;
  sv.dims = rv.header.dims;
  sv.spacing = rv.header.spacing;
  sv.data.assign(rv.f32.begin(), rv.f32.end());
  return sv;
}

void write_label_volume(const std::string& json_path, const LabelVolume& v) {
  v.validate();
  VolumeHeader h{v.dims, v.spacing, ElemType::U8};
  write_volume(json_path, h, v.data.data());
}

void write_scalar_volume(const std::string& json_path, const ScalarVolume& v) {
  v.validate_shape();
  for (double d : v.data) {
    if (!std::isfinite(d)) {
      throw IoError(json_path + ": non-finite value in \"payload\"");
    }
  }
  VolumeHeader h{v.dims, v.spacing, ElemType::F32};
  std::vector<float> narrowed(v.data.begin(), v.data.end());
  write_volume(json_path, h, narrowed.data());
}

// ---------------------------------------------------------------------------
// NIfTI-1 subset
// ---------------------------------------------------------------------------

namespace {

std::int16_t rd_i16(const std::uint8_t* p) {
  return static_cast<std::int16_t>(p[0] | (p[1] << 8));
}
std::int32_t rd_i32(const std::uint8_t* p) {
  return static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16) |
                                   (std::uint32_t(p[3]) << 24));
}
float rd_f32(const std::uint8_t* p) {
  std::uint32_t u = p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

constexpr int kNiftiHeaderSize = 348;
// NIfTI-1 datatype codes.
constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_FLOAT32 = 16;

}  // namespace

RawVolume read_nifti_subset(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < kNiftiHeaderSize) {
    throw IoError(path + ": file shorter than the 348-byte NIfTI-1 header");
  }
  const std::uint8_t* h = bytes.data();

  const std::int32_t sizeof_hdr = rd_i32(h + 0);
  if (sizeof_hdr != kNiftiHeaderSize) {
    // 1543569408 is 348 byte-swapped: a big-endian file, outside the subset.
    throw IoError(path + ": unsupported format (sizeof_hdr = " +
                  std::to_string(sizeof_hdr) + ", expected 348; big-endian files "
                  "are not supported)");
  }
  const char* magic = reinterpret_cast<const char*>(h + 344);
  const bool single_file = std::strncmp(magic, "n+1", 3) == 0 && magic[3] == '\0';
  const bool pair_file = std::strncmp(magic, "ni1", 3) == 0 && magic[3] == '\0';
  if (!single_file && !pair_file) {
    throw IoError(path + ": unsupported format (magic is not \"n+1\"/\"ni1\")");
  }

  const std::int16_t ndim = rd_i16(h + 40);
  if (ndim < 1 || ndim > 7) {
    throw IoError(path + ": dim[0] = " + std::to_string(ndim) + " outside [1,7]");
  }
  Dims dims;
  dims.nx = rd_i16(h + 42);
  dims.ny = ndim >= 2 ? rd_i16(h + 44) : 1;
  dims.nz = ndim >= 3 ? rd_i16(h + 46) : 1;
  for (int d = 4; d <= ndim; ++d) {
    const std::int16_t extent = rd_i16(h + 40 + 2 * d);
    if (extent > 1) {
      throw IoError(path + ": unsupported format (dim[" + std::to_string(d) +
                    "] = " + std::to_string(extent) + "; only 3-D volumes are supported)");
    }
  }
  try {
    dims.validate();
  } catch (const ValidationError& e) {
    throw IoError(path + ": " + e.what());
  }

  const std::int16_t datatype = rd_i16(h + 70);
  const std::int16_t bitpix = rd_i16(h + 72);
  ElemType elem;
  int file_elem_size;
  switch (datatype) {
    case DT_UINT8:
      elem = ElemType::U8;
      file_elem_size = 1;
      break;
    case DT_INT16:
      elem = ElemType::F32;  // widened on read
      file_elem_size = 2;
      break;
    case DT_FLOAT32:
      elem = ElemType::F32;
      file_elem_size = 4;
      break;
    default:
      throw IoError(path + ": unsupported format (datatype code " +
                    std::to_string(datatype) + "; supported: uint8, int16, float32)");
  }
  if (bitpix != file_elem_size * 8) {
    throw IoError(path + ": bitpix " + std::to_string(bitpix) +
                  " inconsistent with datatype");
  }

  Spacing spacing;
  spacing.dx = rd_f32(h + 76 + 4 * 1);
  spacing.dy = ndim >= 2 ? rd_f32(h + 76 + 4 * 2) : 1.0f;
  spacing.dz = ndim >= 3 ? rd_f32(h + 76 + 4 * 3) : 1.0f;
  try {
    spacing.validate();
  } catch (const ValidationError& e) {
    throw IoError(path + ": pixdim invalid (" + e.what() + ")");
  }

  // Locate the payload.
  const std::uint8_t* body = nullptr;
  std::vector<std::uint8_t> img_bytes;
  const std::size_t need = dims.voxels() * static_cast<std::size_t>(file_elem_size);
  if (single_file) {
    const float vox_offset = rd_f32(h + 108);
    if (!(vox_offset >= kNiftiHeaderSize) || vox_offset != std::floor(vox_offset)) {
      throw IoError(path + ": invalid vox_offset");
    }
    const auto off = static_cast<std::size_t>(vox_offset);
    if (bytes.size() < off + need) {
      throw IoError(path + ": payload truncated (need " + std::to_string(need) +
                    " bytes at offset " + std::to_string(off) + ")");
    }
    body = bytes.data() + off;
  } else {
    // .hdr/.img pair: payload in the sibling .img.
    fs::path img = fs::path(path);
    img.replace_extension(".img");
    img_bytes = read_file_bytes(img.string());
    if (img_bytes.size() < need) {
      throw IoError(img.string() + ": payload truncated (need " +
                    std::to_string(need) + " bytes)");
    }
    body = img_bytes.data();
  }

  RawVolume rv;
  rv.header = {dims, spacing, elem};
  const std::size_t n = dims.voxels();
  if (datatype == DT_UINT8) {
    rv.u8.assign(body, body + n);
  } else if (datatype == DT_INT16) {
    rv.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      rv.f32[i] = static_cast<float>(rd_i16(body + 2 * i));
    }
  } else {
    rv.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      rv.f32[i] = rd_f32(body + 4 * i);
      if (!std::isfinite(rv.f32[i])) {
        throw IoError(path + ": non-finite value in \"payload\"");
      }
    }
  }
  return rv;
}

namespace {

bool ends_with(const std::string& s, const char* suffix) {
  const std::size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

}  // namespace

RawVolume read_volume_auto(const std::string& path) {
  if (ends_with(path, ".nii") || ends_with(path, ".hdr")) {
    return read_nifti_subset(path);
  }
  if (ends_with(path, ".json")) {
    return read_volume(path);
  }
  throw IoError(path + ": unrecognized volume extension (expected .json, .nii or .hdr)");
}

LabelVolume read_label_volume_auto(const std::string& path) {
  if (ends_with(path, ".json")) {
    return read_label_volume(path);
  }
  RawVolume rv = read_volume_auto(path);
  if (rv.header.elem != ElemType::U8) {
    throw IoError(path + ": expected a uint8 label volume");
  }
  LabelVolume lv;
  lv.dims = rv.header.dims;
  lv.spacing = rv.header.spacing;
  lv.data = std::move(rv.u8);
  int max_label = 0;
  for (std::uint8_t v : lv.data) {
    max_label = std::max(max_label, int(v));
  }
  lv.num_classes = std::max(1, max_label);
  return lv;
}

ScalarVolume read_scalar_volume_auto(const std::string& path) {
  if (ends_with(path, ".json")) {
    return read_scalar_volume(path);
  }
  RawVolume rv = read_volume_auto(path);
  ScalarVolume sv;
  sv.dims = rv.header.dims;
  sv.spacing = rv.header.spacing;
  if (rv.header.elem == ElemType::U8) {
    sv.data.assign(rv.u8.begin(), rv.u8.end());
  } else {
    sv.data.assign(rv.f32.begin(), rv.f32.end());
  }
  return sv;
}

}  // namespace sdm
