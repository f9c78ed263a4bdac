#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <vector>

#include "sdm/errors.hpp"

namespace sdm {

// Physical voxel edge lengths in millimetres. All components > 0 and finite.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  void validate() const;
  double min() const { return dx < dy ? (dx < dz ? dx : dz) : (dy < dz ? dy : dz); }
  bool operator==(const Spacing&) const = default;
};

// Voxel counts per axis. Linear layout is x-fastest: index = x + nx*(y + ny*z).
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }
  void validate() const;
  bool operator==(const Dims&) const = default;
};

// Inverse of Dims::index.
inline std::array<int, 3> coords_of(std::size_t idx, const Dims& d) {
  const int x = static_cast<int>(idx % static_cast<std::size_t>(d.nx));
  idx /= static_cast<std::size_t>(d.nx);
  const int y = static_cast<int>(idx % static_cast<std::size_t>(d.ny));
  const int z = static_cast<int>(idx / static_cast<std::size_t>(d.ny));
  return {x, y, z};
}

// Voxel centre position in mm. Centres sit at (i + 0.5) * spacing so a grid of
// n voxels spans exactly [0, n*spacing].
inline double voxel_center_mm(int i, double spacing) { return (i + 0.5) * spacing; }

inline std::array<double, 3> voxel_center_mm(int x, int y, int z, const Spacing& s) {
  return {(x + 0.5) * s.dx, (y + 0.5) * s.dy, (z + 0.5) * s.dz};
}

// Dense class-label grid. Labels are in [0, num_classes], 0 = background.
struct LabelVolume {
  Dims dims;
  Spacing spacing;
  int num_classes = 1;
  std::vector<std::uint8_t> data;

  void validate() const;
  std::uint8_t at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }
};

// Dense real-valued grid (images, probability maps, distance maps).
// Stored as double; serialized as float32 (see volume_io).
struct ScalarVolume {
  Dims dims;
  Spacing spacing;
  std::vector<double> data;

  void validate_shape() const;
  // Throws ValidationError if any value is NaN/Inf; `what` names the caller.
  void require_finite(const char* what) const;
  double at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }
  double& at(int x, int y, int z) { return data[dims.index(x, y, z)]; }
};

ScalarVolume make_scalar_volume(Dims dims, Spacing spacing, double fill = 0.0);

enum class SdmNormalization : std::uint8_t {
  RawPhysical,  // values in mm (or voxel units)
  UnitRange,    // values normalized into [-1, 1]
};

// Per-class scale factors recorded by normalize_sdm so it can be inverted.
struct NormConstants {
  double max_positive = 1.0;  // positives were divided by this
  double min_negative_abs = 1.0;  // negatives were divided by this
};

// One signed distance field per organ class (class c stored at index c-1).
// Sign convention: value < 0 inside the organ, > 0 outside.
struct SdmVolume {
  std::vector<ScalarVolume> fields;
  SdmNormalization normalization = SdmNormalization::RawPhysical;
  std::vector<NormConstants> constants;  // one per field when normalized

  int num_classes() const { return static_cast<int>(fields.size()); }
  void validate() const;
};

enum class ElemType : std::uint8_t { U8, F32 };

// On-disk header for the <name>.json + <name>.raw pair. Axis order is always
// x-fastest; the tag exists in the file so readers can verify it.
struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  ElemType elem = ElemType::F32;

  std::size_t elem_size() const { return elem == ElemType::U8 ? 1 : 4; }
  std::size_t payload_bytes() const { return dims.voxels() * elem_size(); }
};

// Binary per-class mask: 1.0 where label == class_id, else 0.0.
// class_id 0 selects the background mask; valid range is [0, num_classes].
ScalarVolume one_hot(const LabelVolume& labels, int class_id);

// True when a/b agree on dims and spacing (exact).
bool same_grid(const Dims& a, const Spacing& sa, const Dims& b, const Spacing& sb);

}  // namespace sdm
