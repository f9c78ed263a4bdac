#include "sdm/volume.hpp"

#include <cmath>
#include <string>

namespace sdm {

void Spacing::validate() const {
  for (double v : {dx, dy, dz}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError("spacing_mm components must be positive and finite");
    }
  }
}

void Dims::validate() const {
  if (nx <= 0 || ny <= 0 || nz <= 0) {
    throw ValidationError("dims must be positive");
  }
}

void LabelVolume::validate() const {
  dims.validate();
  spacing.validate();
  if (num_classes < 1) {
    throw ValidationError("num_classes must be >= 1");
  }
  if (data.size() != dims.voxels()) {
    throw ValidationError("label data length does not match dims");
  }
  for (std::uint8_t v : data) {
    if (v > num_classes) {
      throw ValidationError("label value " + std::to_string(int(v)) +
                            " exceeds num_classes " + std::to_string(num_classes));
    }
  }
}

void ScalarVolume::validate_shape() const {
  dims.validate();
  spacing.validate();
  if (data.size() != dims.voxels()) {
    throw ValidationError("scalar data length does not match dims");
  }
}

void ScalarVolume::require_finite(const char* what) const {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw ValidationError(std::string(what) + ": non-finite value in volume payload");
    }
  }
}

ScalarVolume make_scalar_volume(Dims dims, Spacing spacing, double fill) {
  dims.validate();
  spacing.validate();
  ScalarVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.data.assign(dims.voxels(), fill);
  return v;
}

void SdmVolume::validate() const {
  if (fields.empty()) {
    throw ValidationError("SdmVolume has no class fields");
  }
  for (const auto& f : fields) {
    f.validate_shape();
    if (!same_grid(f.dims, f.spacing, fields[0].dims, fields[0].spacing)) {
      throw ValidationError("SdmVolume class fields disagree on grid");
    }
  }
  if (normalization == SdmNormalization::UnitRange) {
    if (constants.size() != fields.size()) {
      throw ValidationError("normalized SdmVolume must carry one NormConstants per class");
    }
    for (const auto& f : fields) {
      for (double v : f.data) {
        if (v < -1.0 - 1e-12 || v > 1.0 + 1e-12) {
          throw ValidationError("normalized SDM value outside [-1, 1]");
        }
      }
    }
  }
}

ScalarVolume one_hot(const LabelVolume& labels, int class_id) {
  if (class_id < 0 || class_id > labels.num_classes) {
    throw ValidationError("one_hot: class_id " + std::to_string(class_id) +
                          " outside [0, " + std::to_string(labels.num_classes) + "]");
  }
  ScalarVolume out = make_scalar_volume(labels.dims, labels.spacing);
  const auto n = labels.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = labels.data[i] == class_id ? 1.0 : 0.0;
  }
  return out;
}

bool same_grid(const Dims& a, const Spacing& sa, const Dims& b, const Spacing& sb) {
  return a == b && sa == sb;
}

}  // namespace sdm
