#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sdm/heaviside.hpp"
#include "sdm/volume.hpp"

namespace sdm {

enum class VoxelReduction : std::uint8_t { MeanPerClass, SumPerClass };

struct LossConfig {
  double epsilon = 1e-5;  // Dice smoothing term
  int num_classes = 1;
  VoxelReduction reduction = VoxelReduction::MeanPerClass;
  double lambda = 10.0;  // weight on the SDM regression losses
  // Dice as printed gives dice(empty, empty) = 2; this switches to the
  // (2*sum(yp)+eps)/(sum(y)+sum(p)+eps) form where it equals 1.
  bool conventional_dice_smoothing = false;

  void validate() const {
    if (!(epsilon > 0.0)) throw ValidationError("loss epsilon must be > 0");
    if (lambda < 0.0) throw ValidationError("loss lambda must be >= 0");
    if (num_classes < 1) throw ValidationError("loss num_classes must be >= 1");
  }
};

// Losses operate on flat class-major arrays: element (t, v) at t*voxels + v.
// Gradients come back in the same layout. Accumulation runs in double in a
// fixed order, so results are deterministic for both float and double inputs.
template <class T>
struct LossResult {
  double value = 0.0;
  std::vector<T> grad;  // d value / d pred, class-major
};

namespace detail {
constexpr double kProductGuard = 1e-12;  // removable pole at y = p = 0 only
}

// One summand of the product regression loss: -y*p / (y*p + p^2 + y^2).
// Range [-1/3, 1]; minimum at y = p != 0, maximum at y = -p != 0.
template <class T>
double product_term(T y, T p) {
  const double yd = y, pd = p;
  const double r = yd * pd + pd * pd + yd * yd + detail::kProductGuard;
  return -(yd * pd) / r;
}

// d(product_term)/dp = y (p^2 - y^2 - guard) / r^2.
template <class T>
double product_term_grad(T y, T p) {
  const double yd = y, pd = p;
  const double r = yd * pd + pd * pd + yd * yd + detail::kProductGuard;
  return yd * (pd * pd - yd * yd - detail::kProductGuard) / (r * r);
}

// Dice loss (N minus the summed per-class dice terms), literal form:
// each term is 2*(sum(y p) + eps) / (sum(y) + sum(p) + eps).
template <class T>
LossResult<T> dice_loss(const T* pred, const T* gt, std::size_t voxels,
                        const LossConfig& cfg) {
  cfg.validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  LossResult<T> out;
  out.grad.assign(classes * voxels, T(0));
  double loss = static_cast<double>(classes);
  for (std::size_t t = 0; t < classes; ++t) {
    const T* p = pred + t * voxels;
    const T* y = gt + t * voxels;
    double sum_yp = 0.0, sum_y = 0.0, sum_p = 0.0;
    for (std::size_t v = 0; v < voxels; ++v) {
      sum_yp += double(y[v]) * double(p[v]);
      sum_y += double(y[v]);
      sum_p += double(p[v]);
    }
    const double den = sum_y + sum_p + cfg.epsilon;
    const double num =
        cfg.conventional_dice_smoothing ? 2.0 * sum_yp + cfg.epsilon
                                        : 2.0 * (sum_yp + cfg.epsilon);
    loss -= num / den;
    T* g = out.grad.data() + t * voxels;
    const double inv_den2 = 1.0 / (den * den);
    for (std::size_t v = 0; v < voxels; ++v) {
      // d(num/den)/dp_v = (2 y_v * den - num) / den^2; loss subtracts it.
      g[v] = static_cast<T>(-(2.0 * double(y[v]) * den - num) * inv_den2);
    }
  }
  out.value = loss;
  return out;
}

// Product regression loss over SDM values, reduced per class then summed.
template <class T>
LossResult<T> product_loss(const T* pred_sdm, const T* gt_sdm, std::size_t voxels,
                           const LossConfig& cfg) {
  cfg.validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  const double scale =
      cfg.reduction == VoxelReduction::MeanPerClass ? 1.0 / double(voxels) : 1.0;
  LossResult<T> out;
  out.grad.assign(classes * voxels, T(0));
  double loss = 0.0;
  for (std::size_t t = 0; t < classes; ++t) {
    const T* p = pred_sdm + t * voxels;
    const T* y = gt_sdm + t * voxels;
    T* g = out.grad.data() + t * voxels;
    double acc = 0.0;
    for (std::size_t v = 0; v < voxels; ++v) {
      acc += product_term(y[v], p[v]);
      g[v] = static_cast<T>(product_term_grad(y[v], p[v]) * scale);
    }
    loss += acc * scale;
  }
  out.value = loss;
  return out;
}

// L1 regression loss; subgradient sign(p - y), 0 at ties.
template <class T>
LossResult<T> l1_loss(const T* pred_sdm, const T* gt_sdm, std::size_t voxels,
                      const LossConfig& cfg) {
  cfg.validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  const double scale =
      cfg.reduction == VoxelReduction::MeanPerClass ? 1.0 / double(voxels) : 1.0;
  LossResult<T> out;
  out.grad.assign(classes * voxels, T(0));
  double loss = 0.0;
  for (std::size_t t = 0; t < classes; ++t) {
    const T* p = pred_sdm + t * voxels;
    const T* y = gt_sdm + t * voxels;
    T* g = out.grad.data() + t * voxels;
    double acc = 0.0;
    for (std::size_t v = 0; v < voxels; ++v) {
      const double diff = double(p[v]) - double(y[v]);
      acc += std::abs(diff);
      g[v] = static_cast<T>(diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0));
    }
    loss += acc * scale;
  }
  out.value = loss;
  return out;
}

// product + L1, with component values reported separately.
template <class T>
struct SdmLossResult {
  double value = 0.0;
  double product = 0.0;
  double l1 = 0.0;
  std::vector<T> grad;
};

template <class T>
SdmLossResult<T> sdm_loss(const T* pred_sdm, const T* gt_sdm, std::size_t voxels,
                          const LossConfig& cfg) {
  LossResult<T> prod = product_loss(pred_sdm, gt_sdm, voxels, cfg);
  LossResult<T> l1 = l1_loss(pred_sdm, gt_sdm, voxels, cfg);
  SdmLossResult<T> out;
  out.product = prod.value;
  out.l1 = l1.value;
  out.value = prod.value + l1.value;
  out.grad = std::move(prod.grad);
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    out.grad[i] += l1.grad[i];
  }
  return out;
}

struct JointComponents {
  double total = 0.0;
  double dice = 0.0;
  double l1 = 0.0;
  double product = 0.0;
};

template <class T>
struct JointResult {
  JointComponents components;
  std::vector<T> grad;  // w.r.t. pred_sdm
};

// Full objective: Dice on the Heaviside-converted segmentation plus
// lambda * (product + L1) on the SDM itself. The Dice part chains through
// d seg/d phi = -smooth_step_grad(-phi).
template <class T>
JointResult<T> joint_loss(const T* pred_sdm, const T* gt_sdm, const T* gt_onehot,
                          std::size_t voxels, const HeavisideConfig& hcfg,
                          const LossConfig& cfg) {
  cfg.validate();
  hcfg.validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  const std::size_t n = classes * voxels;

  std::vector<T> seg(n);
  for (std::size_t i = 0; i < n; ++i) {
    seg[i] = static_cast<T>(smooth_step(-double(pred_sdm[i]), hcfg));
  }
  LossResult<T> dice = dice_loss(seg.data(), gt_onehot, voxels, cfg);
  SdmLossResult<T> sdm = sdm_loss(pred_sdm, gt_sdm, voxels, cfg);

  JointResult<T> out;
  out.components.dice = dice.value;
  out.components.l1 = sdm.l1;
  out.components.product = sdm.product;
  out.components.total = dice.value + cfg.lambda * sdm.value;
  out.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double chain = -smooth_step_grad(-double(pred_sdm[i]), hcfg);
    out.grad[i] = static_cast<T>(double(dice.grad[i]) * chain +
                                 cfg.lambda * double(sdm.grad[i]));
  }
  return out;
}

// --------------------------------------------------------------------------
// Volume-level wrappers (shape-checked, double precision).
// --------------------------------------------------------------------------

// Flattens per-class volumes into one class-major buffer; throws on grid
// mismatch between any pair of inputs.
std::vector<double> flatten_class_fields(const std::vector<ScalarVolume>& fields);

LossResult<double> dice_loss(const std::vector<ScalarVolume>& pred,
                             const std::vector<ScalarVolume>& gt, LossConfig cfg);
LossResult<double> product_loss(const std::vector<ScalarVolume>& pred_sdm,
                                const std::vector<ScalarVolume>& gt_sdm,
                                LossConfig cfg);
LossResult<double> l1_loss(const std::vector<ScalarVolume>& pred_sdm,
                           const std::vector<ScalarVolume>& gt_sdm, LossConfig cfg);
SdmLossResult<double> sdm_loss(const std::vector<ScalarVolume>& pred_sdm,
                               const std::vector<ScalarVolume>& gt_sdm,
                               LossConfig cfg);
JointResult<double> joint_loss(const SdmVolume& pred_sdm, const SdmVolume& gt_sdm,
                               const LabelVolume& gt_labels,
                               const HeavisideConfig& hcfg, LossConfig cfg);

}  // namespace sdm
