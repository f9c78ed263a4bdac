#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sdm/volume.hpp"

namespace sdm {

// Durable writes shared across the toolkit: write to <path>.tmp, rename on
// success.
void write_file_atomic(const std::string& path, const void* data,
                       std::size_t size);
void write_file_atomic(const std::string& path, const std::string& text);

// Raw read result: header plus exactly one active payload (by header.elem).
struct RawVolume {
  VolumeHeader header;
  std::vector<std::uint8_t> u8;
  std::vector<float> f32;
};

// <name>.json + <name>.raw pair. `json_path` must end in ".json"; the raw
// payload lives next to it. Payload is little-endian, x-fastest.
RawVolume read_volume(const std::string& json_path);
void write_volume(const std::string& json_path, const VolumeHeader& header,
                  const void* payload);

// Typed wrappers. Readers validate dtype; writers narrow double -> float32
// and reject non-finite values. All writes go to a temp file and rename on
// success so failures never leave partial outputs.
LabelVolume read_label_volume(const std::string& json_path);
ScalarVolume read_scalar_volume(const std::string& json_path);
void write_label_volume(const std::string& json_path, const LabelVolume& v);
void write_scalar_volume(const std::string& json_path, const ScalarVolume& v);

// Uncompressed NIfTI-1 subset: magic "n+1" (single file) or "ni1" (.hdr/.img
// pair), datatype uint8 | int16 | float32, little-endian, no extensions.
// int16 payloads are widened to float32. Read-only.
RawVolume read_nifti_subset(const std::string& path);

// Dispatch by extension: .nii/.hdr -> NIfTI, .json -> header/raw pair.
RawVolume read_volume_auto(const std::string& path);
LabelVolume read_label_volume_auto(const std::string& path);
ScalarVolume read_scalar_volume_auto(const std::string& path);

}  // namespace sdm
