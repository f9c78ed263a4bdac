#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdm/edt.hpp"
#include "sdm/losses.hpp"
#include "sdm/unet.hpp"
#include "sdm/volume.hpp"

namespace sdm {

enum class TrainMode : std::uint8_t { DiceOnly, SdmOnly, L1Joint, SdmJoint };

std::string train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::SdmJoint;
  double lr0 = 5e-4;
  double lr_decay = 0.8;
  int lr_step_epochs = 25;
  int epochs = 1;
  double lambda = 10.0;
  double heaviside_k = 1500.0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

double lr_at(int epoch, const TrainConfig& cfg);

// Bias-corrected Adam. Moments are kept in double regardless of the
// parameter type; updates run elementwise in a fixed order.
template <class T>
struct AdamState {
  std::vector<std::vector<double>> m, v;  // aligned with Parameters items
  long long t = 0;
};

template <class T>
void adam_init(AdamState<T>& state, const Parameters<T>& params);

template <class T>
void adam_step(Parameters<T>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg);

// One training example. gt_sdm must be the normalized SDM of labels on the
// same grid (one field per class).
struct TrainCase {
  ScalarVolume image;
  LabelVolume labels;
  SdmVolume gt_sdm;
};

struct LossComponents {
  std::optional<double> dice, l1, product;  // absent components stay empty
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossComponents loss;  // frozen re-evaluation after the epoch's updates
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::string mode;
  double beta1 = 0.0, beta2 = 0.0, adam_eps = 0.0;
  std::vector<EpochRecord> epochs;
};

// CSV columns: epoch, lr, dice_loss, l1_loss, product_loss, total. Absent
// components are empty fields. Wall time is deliberately not emitted so
// same-seed runs produce byte-identical files.
std::string train_log_csv(const TrainLog& log);

struct TrainResult {
  UNet<float> net;
  TrainLog log;
};

// Mode dispatch over the four objectives: dice-only uses a logistic head
// and the Dice loss; the other modes use a tanh SDM head with product/L1
// regression, optionally chained through the smooth Heaviside into Dice.
// The head kind in net_cfg is overridden to match the mode. Deterministic
// given cfg.seed (network init and per-epoch case order both derive from
// it). Epoch records re-evaluate all cases with the epoch's final
// parameters, so a logged loss can be reproduced from a checkpoint.
TrainResult train(const std::vector<TrainCase>& cases,
                  NetworkConfig net_cfg, const TrainConfig& cfg);

// Mean loss components over cases at the current parameters; no updates.
LossComponents evaluate(UNet<float>& net, const std::vector<TrainCase>& cases,
                        const TrainConfig& cfg);

// Segmentation from per-class SDM fields: a voxel takes the class with the
// most negative SDM among those negative there, else background.
LabelVolume labels_from_sdm_fields(const std::vector<ScalarVolume>& fields);

// Segmentation from per-class probability fields: argmax class where the
// probability exceeds 0.5, else background.
LabelVolume labels_from_prob_fields(const std::vector<ScalarVolume>& fields);

struct InferResult {
  std::vector<ScalarVolume> fields;  // head output per class
  bool fields_are_sdm = true;
  LabelVolume labels;
};

InferResult infer(const ScalarVolume& image, UNet<float>& net);

}  // namespace sdm
