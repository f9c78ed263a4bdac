#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "sdm/volume.hpp"

namespace sdm {

enum class PhantomShape : std::uint8_t { Sphere, Ellipsoid, TwoLobe };

struct DecoySpec {
  int count = 0;
  double radius_mm = 2.0;
  double margin_mm = 6.0;  // min surface-to-centre clearance from the organ
};

// Analytic single-organ phantom. All geometry is in mm; voxel membership is
// decided at voxel centres. Two-lobe is the union of two overlapping
// ellipsoids sharing the radii convention of the ellipsoid shape.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  PhantomShape shape = PhantomShape::Sphere;
  std::array<double, 3> center_mm{16.0, 16.0, 16.0};
  double radius_mm = 8.0;                       // sphere only
  std::array<double, 3> radii_mm{8.0, 6.0, 5.0};  // ellipsoid / lobe 1
  std::array<double, 3> lobe2_center_mm{20.0, 16.0, 16.0};
  std::array<double, 3> lobe2_radii_mm{6.0, 5.0, 4.0};
  double fg_mean = 1.0;
  double fg_std = 0.05;
  double bg_mean = 0.0;
  double bg_std = 0.05;
  double blur_radius_mm = 1.0;
  std::uint64_t seed = 0;
  DecoySpec decoys;

  void validate() const;  // radii positive, shape fits with a 2-voxel margin
};

PhantomSpec phantom_spec_from_json_text(const std::string& text);
PhantomSpec read_phantom_spec(const std::string& path);
std::string phantom_spec_to_json_text(const PhantomSpec& spec);

struct Phantom {
  ScalarVolume image;
  LabelVolume labels;
};

// Voxel-centre rasterization of the analytic shape, class id 1.
LabelVolume rasterize_phantom(const PhantomSpec& spec);

// Rasterized labels plus an intensity image: per-voxel means, Gaussian blur
// of the mean field, additive Gaussian noise, then any configured decoys.
// Deterministic in spec.seed.
Phantom generate_phantom(const PhantomSpec& spec);

// Per-slice random dilation or erosion by 0..magnitude steps (4-neighbour,
// in-plane), modelling contour-by-contour annotation jitter. Slices never
// flip between empty and non-empty. Single-class labels only.
LabelVolume corrupt_slicewise(const LabelVolume& labels, int magnitude,
                              std::uint64_t seed);

// Adds decoy blobs with foreground-like intensity at least
// decoys.margin_mm away from the organ surface. Labels are not touched.
ScalarVolume inject_decoys(const ScalarVolume& image, const PhantomSpec& spec);

}  // namespace sdm
