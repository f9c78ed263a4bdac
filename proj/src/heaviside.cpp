#include "sdm/heaviside.hpp"

#include <cmath>

namespace sdm {

void HeavisideConfig::validate() const {
  if (!(k > 0.0) || !std::isfinite(k)) {
    throw ValidationError("heaviside k must be positive and finite");
  }
}

namespace {
constexpr double kSaturation = 40.0;  // exp(-40) underflows the logistic in 64-bit
}

double smooth_step(double z, const HeavisideConfig& cfg) {
  const double a = cfg.k * z;
  if (a > kSaturation) {
    return 1.0;
  }
  if (a < -kSaturation) {
    return 0.0;
  }
  return 1.0 / (1.0 + std::exp(-a));
}

double smooth_step_grad(double z, const HeavisideConfig& cfg) {
  const double a = cfg.k * z;
  if (a > kSaturation || a < -kSaturation) {
    return 0.0;
  }
  const double s = 1.0 / (1.0 + std::exp(-a));
  return cfg.k * s * (1.0 - s);
}

ScalarVolume seg_from_sdm(const ScalarVolume& sdm, const HeavisideConfig& cfg) {
  cfg.validate();
  sdm.validate_shape();
  ScalarVolume out = sdm;
  for (double& v : out.data) {
    v = smooth_step(-v, cfg);
  }
  return out;
}

std::vector<ScalarVolume> seg_from_sdm(const SdmVolume& sdm, const HeavisideConfig& cfg) {
  std::vector<ScalarVolume> out;
  out.reserve(sdm.fields.size());
  for (const auto& f : sdm.fields) {
    out.push_back(seg_from_sdm(f, cfg));
  }
  return out;
}

}  // namespace sdm
