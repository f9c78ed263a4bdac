#include "sdm/losses.hpp"

#include <cstring>

namespace sdm {

std::vector<double> flatten_class_fields(const std::vector<ScalarVolume>& fields) {
  if (fields.empty()) throw ValidationError("loss input has no class fields");
  const std::size_t voxels = fields[0].dims.voxels();
  std::vector<double> flat(fields.size() * voxels);
  for (std::size_t t = 0; t < fields.size(); ++t) {
    if (!same_grid(fields[t].dims, fields[t].spacing, fields[0].dims,
                   fields[0].spacing)) {
      throw ValidationError("loss input class fields disagree on grid");
    }
    fields[t].validate_shape();
    std::memcpy(flat.data() + t * voxels, fields[t].data.data(),
                voxels * sizeof(double));
  }
  return flat;
}

namespace {

void require_matching(const std::vector<ScalarVolume>& a,
                      const std::vector<ScalarVolume>& b) {
  if (a.empty() || b.empty()) throw ValidationError("loss input has no class fields");
  if (a.size() != b.size()) {
    throw ValidationError("loss inputs disagree on class count");
  }
  if (!same_grid(a[0].dims, a[0].spacing, b[0].dims, b[0].spacing)) {
    throw ValidationError("loss inputs disagree on grid");
  }
}

LossConfig with_classes(LossConfig cfg, std::size_t classes) {
  cfg.num_classes = static_cast<int>(classes);
  return cfg;
}

}  // namespace

LossResult<double> dice_loss(const std::vector<ScalarVolume>& pred,
                             const std::vector<ScalarVolume>& gt, LossConfig cfg) {
  require_matching(pred, gt);
  const std::vector<double> p = flatten_class_fields(pred);
  const std::vector<double> y = flatten_class_fields(gt);
  return dice_loss(p.data(), y.data(), pred[0].dims.voxels(),
                   with_classes(cfg, pred.size()));
}

LossResult<double> product_loss(const std::vector<ScalarVolume>& pred_sdm,
                                const std::vector<ScalarVolume>& gt_sdm,
                                LossConfig cfg) {
  require_matching(pred_sdm, gt_sdm);
  const std::vector<double> p = flatten_class_fields(pred_sdm);
  const std::vector<double> y = flatten_class_fields(gt_sdm);
  return product_loss(p.data(), y.data(), pred_sdm[0].dims.voxels(),
                      with_classes(cfg, pred_sdm.size()));
}

LossResult<double> l1_loss(const std::vector<ScalarVolume>& pred_sdm,
                           const std::vector<ScalarVolume>& gt_sdm, LossConfig cfg) {
  require_matching(pred_sdm, gt_sdm);
  const std::vector<double> p = flatten_class_fields(pred_sdm);
  const std::vector<double> y = flatten_class_fields(gt_sdm);
  return l1_loss(p.data(), y.data(), pred_sdm[0].dims.voxels(),
                 with_classes(cfg, pred_sdm.size()));
}

SdmLossResult<double> sdm_loss(const std::vector<ScalarVolume>& pred_sdm,
                               const std::vector<ScalarVolume>& gt_sdm,
                               LossConfig cfg) {
  require_matching(pred_sdm, gt_sdm);
  const std::vector<double> p = flatten_class_fields(pred_sdm);
  const std::vector<double> y = flatten_class_fields(gt_sdm);
  return sdm_loss(p.data(), y.data(), pred_sdm[0].dims.voxels(),
                  with_classes(cfg, pred_sdm.size()));
}

JointResult<double> joint_loss(const SdmVolume& pred_sdm, const SdmVolume& gt_sdm,
                               const LabelVolume& gt_labels,
                               const HeavisideConfig& hcfg, LossConfig cfg) {
  require_matching(pred_sdm.fields, gt_sdm.fields);
  gt_labels.validate();
  if (!same_grid(gt_labels.dims, gt_labels.spacing, pred_sdm.fields[0].dims,
                 pred_sdm.fields[0].spacing)) {
    throw ValidationError("loss inputs disagree on grid");
  }
  const std::size_t classes = pred_sdm.fields.size();
  if (static_cast<std::size_t>(gt_labels.num_classes) != classes) {
    throw ValidationError("loss inputs disagree on class count");
  }
  const std::size_t voxels = gt_labels.dims.voxels();
  const std::vector<double> p = flatten_class_fields(pred_sdm.fields);
  const std::vector<double> y = flatten_class_fields(gt_sdm.fields);
  std::vector<double> onehot(classes * voxels);
  for (std::size_t t = 0; t < classes; ++t) {
    const ScalarVolume oh = one_hot(gt_labels, static_cast<int>(t) + 1);
    std::memcpy(onehot.data() + t * voxels, oh.data.data(),
                voxels * sizeof(double));
  }
  return joint_loss(p.data(), y.data(), onehot.data(), voxels, hcfg,
                    with_classes(cfg, classes));
}

}  // namespace sdm
