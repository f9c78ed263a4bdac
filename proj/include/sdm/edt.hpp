#pragma once

#include "sdm/volume.hpp"

namespace sdm {

enum class EdtAlgorithm : std::uint8_t {
  SeparableExact,     // three 1-D lower-envelope passes, exact
  VectorPropagation,  // Danielsson-style offset sweeps, near-exact
};

struct EdtOptions {
  bool use_spacing = true;  // distances in mm; false = voxel index units
  EdtAlgorithm algorithm = EdtAlgorithm::SeparableExact;
};

// Distance from each voxel centre to the nearest foreground voxel centre.
// `mask` must be binary (exactly 0/1) with at least one foreground voxel;
// foreground voxels get 0. Anisotropy-weighted when use_spacing is set.
ScalarVolume edt_unsigned(const ScalarVolume& mask, const EdtOptions& opts = {});

// Same transform without the final square root. With unit weights every value
// is an exact small integer, which is what the oracle tests compare against.
ScalarVolume edt_unsigned_squared(const ScalarVolume& mask, const EdtOptions& opts = {});

enum class SdmWarning : std::uint8_t {
  None,
  ClassAbsent,       // no voxel carries the class: all-positive map
  ClassFillsVolume,  // every voxel carries the class: all-negative map
};

struct SdmResult {
  ScalarVolume sdm;
  SdmWarning warning = SdmWarning::None;
};

// Signed distance map for one class: negative inside the organ (distance to
// the nearest outside voxel), positive outside (distance to the nearest
// inside voxel). Distances are centre-to-centre, so no voxel is exactly 0 and
// thresholding at 0 recovers the input mask. Degenerate classes (absent /
// filling the volume) return a constant map at the volume diagonal, flagged.
SdmResult sdm_from_labels(const LabelVolume& labels, int class_id,
                          const EdtOptions& opts = {});

struct NormalizedSdm {
  ScalarVolume sdm;
  NormConstants constants;
};

// Scale positives by 1/max(positive) and negatives by 1/|min(negative)| so the
// result lies in [-1, 1]. A side with no values keeps constant 1.
NormalizedSdm normalize_sdm(const ScalarVolume& sdm);

// Inverse of normalize_sdm.
ScalarVolume denormalize_sdm(const ScalarVolume& sdm, const NormConstants& c);

// All organ classes 1..N at once, optionally normalized per class.
SdmVolume sdm_volume_from_labels(const LabelVolume& labels, const EdtOptions& opts = {},
                                 bool normalized = true);

}  // namespace sdm
