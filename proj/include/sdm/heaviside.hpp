#pragma once

#include "sdm/volume.hpp"

namespace sdm {

struct HeavisideConfig {
  double k = 1500.0;  // steepness of the logistic step

  void validate() const;
};

// Smooth unit step: 1/(1+exp(-k*z)). The steepness multiplies z, so k = 1500
// on inputs in [-1,1] is a near-hard step. |k*z| > 40 saturates to exact 0/1
// (exp underflow region), which keeps downstream gradients finite.
double smooth_step(double z, const HeavisideConfig& cfg = {});

// d/dz smooth_step = k * s * (1 - s); exactly 0 in the saturated region.
double smooth_step_grad(double z, const HeavisideConfig& cfg = {});

// Organ probability from a normalized SDM: p = smooth_step(-phi), so p > 0.5
// exactly where phi < 0.
ScalarVolume seg_from_sdm(const ScalarVolume& sdm, const HeavisideConfig& cfg = {});

// Per-class probabilities for every field of a normalized SdmVolume.
std::vector<ScalarVolume> seg_from_sdm(const SdmVolume& sdm,
                                       const HeavisideConfig& cfg = {});

}  // namespace sdm
