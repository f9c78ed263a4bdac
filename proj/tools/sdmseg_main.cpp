#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdm/edt.hpp"
#include "sdm/heaviside.hpp"
#include "sdm/losses.hpp"
#include "sdm/metrics.hpp"
#include "sdm/phantom.hpp"
#include "sdm/trainer.hpp"
#include "sdm/unet.hpp"
#include "sdm/volume_io.hpp"

namespace fs = std::filesystem;
using namespace sdm;

namespace {

constexpr const char* kVersionText =
    "sdmseg 1.0.0 (volume format 1, checkpoint sdmseg-checkpoint-v1)";

void warn_degenerate(SdmWarning w, int class_id) {
  if (w == SdmWarning::ClassAbsent) {
    std::cerr << "warning: class " << class_id
              << " is absent; SDM set to the volume diagonal\n";
  } else if (w == SdmWarning::ClassFillsVolume) {
    std::cerr << "warning: class " << class_id
              << " fills the volume; SDM set to the negated volume diagonal\n";
  }
}

SdmVolume normalized_sdm_for_all_classes(const LabelVolume& labels) {
  return sdm_volume_from_labels(labels, EdtOptions{});
}

void run_edt(const std::string& in, int class_id, const std::string& out,
             bool normalize, bool voxel_units) {
  LabelVolume labels = read_label_volume_auto(in);
  labels.num_classes = std::max(labels.num_classes, class_id);
  EdtOptions opts;
  opts.use_spacing = !voxel_units;
  SdmResult r = sdm_from_labels(labels, class_id, opts);
  warn_degenerate(r.warning, class_id);
  if (normalize) {
    write_scalar_volume(out, normalize_sdm(r.sdm).sdm);
  } else {
    write_scalar_volume(out, r.sdm);
  }
}

void run_convert(const std::string& in, double k, const std::string& out,
                 bool hard) {
  ScalarVolume sdm = read_scalar_volume_auto(in);
  if (hard) {
    LabelVolume seg;
    seg.dims = sdm.dims;
    seg.spacing = sdm.spacing;
    seg.num_classes = 1;
    seg.data.resize(sdm.data.size());
    for (std::size_t i = 0; i < sdm.data.size(); ++i) {
      seg.data[i] = sdm.data[i] < 0.0 ? 1 : 0;
    }
    write_label_volume(out, seg);
  } else {
    HeavisideConfig cfg;
    cfg.k = k;
    write_scalar_volume(out, seg_from_sdm(sdm, cfg));
  }
}

void run_metrics(const std::string& pred_path, const std::string& gt_path,
                 int classes, const std::string& out) {
  LabelVolume pred = read_label_volume_auto(pred_path);
  LabelVolume gt = read_label_volume_auto(gt_path);
  if (pred.num_classes > classes || gt.num_classes > classes) {
    throw ValidationError("metrics: label volume uses more classes than --classes");
  }
  pred.num_classes = classes;
  gt.num_classes = classes;
  write_metrics_csv(evaluate_labels(pred, gt), out);
}

void run_phantom(const std::string& spec_path, const std::string& prefix) {
  const PhantomSpec spec = read_phantom_spec(spec_path);
  const Phantom ph = generate_phantom(spec);
  write_scalar_volume(prefix + "_image.json", ph.image);
  write_label_volume(prefix + "_labels.json", ph.labels);
  const SdmVolume sdm = normalized_sdm_for_all_classes(ph.labels);
  for (std::size_t t = 0; t < sdm.fields.size(); ++t) {
    write_scalar_volume(prefix + "_sdm_c" + std::to_string(t + 1) + ".json",
                        sdm.fields[t]);
  }
}

std::vector<TrainCase> load_cases(const std::string& dir, int classes) {
  std::vector<std::string> stems;
  const std::string suffix = "_image.json";
  if (!fs::is_directory(dir)) {
    throw IoError("cases directory not found: " + dir);
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.substr(name.size() - suffix.size()) == suffix) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) {
    throw IoError("no *_image.json cases found in " + dir);
  }
  std::vector<TrainCase> cases;
  for (const std::string& stem : stems) {
    const std::string base = (fs::path(dir) / stem).string();
    TrainCase c;
    c.image = read_scalar_volume(base + "_image.json");
    c.labels = read_label_volume(base + "_labels.json");
    if (c.labels.num_classes > classes) {
      throw ValidationError("case " + stem + " uses more classes than --classes");
    }
    c.labels.num_classes = classes;
    c.gt_sdm = normalized_sdm_for_all_classes(c.labels);
    cases.push_back(std::move(c));
  }
  return cases;
}

void run_train(const std::string& mode, const std::string& cases_dir, int levels,
               int channels, int cap, int classes, int epochs,
               std::uint64_t seed, const std::string& out_dir, double lr0,
               double lambda, double k) {
  TrainConfig cfg;
  cfg.mode = train_mode_from_name(mode);
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.lr0 = lr0;
  cfg.lambda = lambda;
  cfg.heaviside_k = k;
  NetworkConfig net_cfg;
  net_cfg.levels = levels;
  net_cfg.init_channels = channels;
  net_cfg.channel_cap = cap;
  net_cfg.num_classes = classes;

  const std::vector<TrainCase> cases = load_cases(cases_dir, classes);
  TrainResult result = train(cases, net_cfg, cfg);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + " (" + ec.message() + ")");
  save_checkpoint((fs::path(out_dir) / "final.ckpt").string(), result.net);
  write_file_atomic((fs::path(out_dir) / "train_log.csv").string(),
                    train_log_csv(result.log));
}

void run_infer(const std::string& image_path, const std::string& ckpt,
               const std::string& prefix) {
  ScalarVolume image = read_scalar_volume_auto(image_path);
  UNet<float> net = load_checkpoint(ckpt);
  InferResult r = infer(image, net);
  const std::string tag = r.fields_are_sdm ? "_sdm_c" : "_prob_c";
  for (std::size_t t = 0; t < r.fields.size(); ++t) {
    write_scalar_volume(prefix + tag + std::to_string(t + 1) + ".json",
                        r.fields[t]);
  }
  write_label_volume(prefix + "_labels.json", r.labels);
}

void run_eval_loss(const std::vector<std::string>& pred_paths,
                   const std::vector<std::string>& gt_sdm_paths,
                   const std::string& labels_path, const std::string& mode_name,
                   double k, double lambda) {
  const TrainMode mode = train_mode_from_name(mode_name);
  std::vector<ScalarVolume> pred;
  for (const auto& p : pred_paths) pred.push_back(read_scalar_volume_auto(p));
  if (pred.empty()) throw ValidationError("eval-loss: at least one --pred required");

  LabelVolume labels = read_label_volume_auto(labels_path);
  if (labels.num_classes > int(pred.size())) {
    throw ValidationError("eval-loss: labels use more classes than --pred fields");
  }
  labels.num_classes = int(pred.size());
  std::vector<ScalarVolume> onehot;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    onehot.push_back(one_hot(labels, int(t) + 1));
  }

  LossConfig lc;
  lc.num_classes = int(pred.size());
  lc.lambda = lambda;
  HeavisideConfig hc;
  hc.k = k;

  auto need_gt_sdm = [&]() {
    if (gt_sdm_paths.size() != pred.size()) {
      throw ValidationError("eval-loss: this mode needs one --gt-sdm per --pred");
    }
    std::vector<ScalarVolume> gt;
    for (const auto& p : gt_sdm_paths) gt.push_back(read_scalar_volume_auto(p));
    return gt;
  };

  switch (mode) {
    case TrainMode::DiceOnly: {
      LossResult<double> r = dice_loss(pred, onehot, lc);
      std::cerr << "dice=" << r.value << "\ntotal=" << r.value << "\n";
      break;
    }
    case TrainMode::SdmOnly: {
      SdmLossResult<double> r = sdm_loss(pred, need_gt_sdm(), lc);
      std::cerr << "l1=" << r.l1 << "\nproduct=" << r.product
                << "\ntotal=" << r.value << "\n";
      break;
    }
    case TrainMode::L1Joint: {
      const std::vector<ScalarVolume> gt = need_gt_sdm();
      std::vector<ScalarVolume> seg;
      for (const auto& f : pred) seg.push_back(seg_from_sdm(f, hc));
      LossResult<double> d = dice_loss(seg, onehot, lc);
      LossResult<double> l1 = l1_loss(pred, gt, lc);
      std::cerr << "dice=" << d.value << "\nl1=" << l1.value
                << "\ntotal=" << d.value + lambda * l1.value << "\n";
      break;
    }
    case TrainMode::SdmJoint: {
      const std::vector<ScalarVolume> gt = need_gt_sdm();
      SdmVolume pv{pred, SdmNormalization::UnitRange, {}};
      SdmVolume gv{gt, SdmNormalization::UnitRange, {}};
      JointResult<double> r = joint_loss(pv, gv, labels, hc, lc);
      std::cerr << "dice=" << r.components.dice << "\nl1=" << r.components.l1
                << "\nproduct=" << r.components.product
                << "\ntotal=" << r.components.total << "\n";
      break;
    }
  }
}

struct Rgb {
  std::uint8_t r, g, b;
};

void run_slice_dump(const std::string& in, const std::string& axis, int index,
                    const std::string& out, bool no_contours) {
  RawVolume rv = read_volume_auto(in);
  const Dims& d = rv.header.dims;
  int ax;
  if (axis == "x") {
    ax = 0;
  } else if (axis == "y") {
    ax = 1;
  } else if (axis == "z") {
    ax = 2;
  } else {
    throw ValidationError("slice-dump: --axis must be x, y, or z");
  }
  const int n[3] = {d.nx, d.ny, d.nz};
  if (index < 0 || index >= n[ax]) {
    throw ValidationError("slice-dump: --index out of range [0, " +
                          std::to_string(n[ax] - 1) + "]");
  }
  const int u_ax = (ax == 0) ? 1 : 0;
  const int v_ax = (ax == 2) ? 1 : 2;
  const int W = n[u_ax], H = n[v_ax];

  auto value_at = [&](int u, int v) -> double {
    int c[3];
    c[ax] = index;
    c[u_ax] = u;
    c[v_ax] = v;
    const std::size_t i = d.index(c[0], c[1], c[2]);
    return rv.header.elem == ElemType::U8 ? double(rv.u8[i]) : double(rv.f32[i]);
  };

  double lo = value_at(0, 0), hi = lo;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      lo = std::min(lo, value_at(u, v));
      hi = std::max(hi, value_at(u, v));
    }
  }
  const bool sdm_like = rv.header.elem == ElemType::F32 && lo >= -1.0 - 1e-9 &&
                        hi <= 1.0 + 1e-9;

  std::vector<Rgb> px(std::size_t(W) * H);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double g;
      if (sdm_like) {
        g = (value_at(u, v) + 1.0) / 2.0;
      } else if (hi > lo) {
        g = (value_at(u, v) - lo) / (hi - lo);
      } else {
        g = 0.0;
      }
      const auto b = std::uint8_t(std::lround(std::clamp(g, 0.0, 1.0) * 255.0));
      px[std::size_t(v) * W + u] = {b, b, b};
    }
  }

  if (sdm_like && !no_contours) {
    // Iso-contours of the normalized distance at 0, 0.1, 0.2, 0.3; a pixel
    // is on a contour when it sits on the low side of a level crossing
    // against a 4-neighbour. Lower levels drawn last so they win.
    const double levels[4] = {0.3, 0.2, 0.1, 0.0};
    const Rgb colors[4] = {{0, 200, 0}, {255, 255, 0}, {255, 165, 0}, {255, 0, 0}};
    for (int li = 0; li < 4; ++li) {
      const double c = levels[li];
      for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
          const double a = value_at(u, v);
          bool on = false;
          const int du[4] = {1, -1, 0, 0};
          const int dv[4] = {0, 0, 1, -1};
          for (int t = 0; t < 4 && !on; ++t) {
            const int uu = u + du[t], vv = v + dv[t];
            if (uu < 0 || vv < 0 || uu >= W || vv >= H) continue;
            const double b = value_at(uu, vv);
            on = a <= c && b > c;
          }
          if (on) px[std::size_t(v) * W + u] = colors[li];
        }
      }
    }
  }

  std::string blob = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t head = blob.size();
  blob.resize(head + px.size() * 3);
  for (std::size_t i = 0; i < px.size(); ++i) {
    blob[head + 3 * i] = char(px[i].r);
    blob[head + 3 * i + 1] = char(px[i].g);
    blob[head + 3 * i + 2] = char(px[i].b);
  }
  write_file_atomic(out, blob.data(), blob.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"signed-distance-map segmentation toolkit"};
  app.set_version_flag("--version", kVersionText);
  app.require_subcommand(1);

  // edt
  std::string edt_in, edt_out;
  int edt_class = 1;
  bool edt_normalize = false, edt_voxel_units = false;
  auto* edt_cmd = app.add_subcommand("edt", "signed distance map from labels");
  edt_cmd->add_option("--in", edt_in, "label volume (.json or NIfTI)")->required();
  edt_cmd->add_option("--class", edt_class, "class id");
  edt_cmd->add_option("--out", edt_out, "output SDM volume (.json)")->required();
  edt_cmd->add_flag("--normalize", edt_normalize, "scale into [-1, 1]");
  edt_cmd->add_flag("--voxel-units", edt_voxel_units, "ignore spacing");
  edt_cmd->callback([&]() {
    run_edt(edt_in, edt_class, edt_out, edt_normalize, edt_voxel_units);
  });

  // convert
  std::string conv_in, conv_out;
  double conv_k = 1500.0;
  bool conv_hard = false;
  auto* conv_cmd = app.add_subcommand("convert", "segmentation from an SDM");
  conv_cmd->add_option("--sdm", conv_in, "SDM volume")->required();
  conv_cmd->add_option("--k", conv_k, "Heaviside steepness");
  conv_cmd->add_option("--out", conv_out, "output volume")->required();
  conv_cmd->add_flag("--hard", conv_hard, "hard mask instead of probabilities");
  conv_cmd->callback([&]() { run_convert(conv_in, conv_k, conv_out, conv_hard); });

  // metrics
  std::string met_pred, met_gt, met_out;
  int met_classes = 1;
  auto* met_cmd = app.add_subcommand("metrics", "Dice/HD/HD95/ASD report");
  met_cmd->add_option("--pred", met_pred, "predicted labels")->required();
  met_cmd->add_option("--gt", met_gt, "groundtruth labels")->required();
  met_cmd->add_option("--classes", met_classes, "number of classes");
  met_cmd->add_option("--out", met_out, "report CSV path")->required();
  met_cmd->callback([&]() { run_metrics(met_pred, met_gt, met_classes, met_out); });

  // phantom
  std::string ph_spec, ph_prefix;
  auto* ph_cmd = app.add_subcommand("phantom", "synthetic case generator");
  ph_cmd->add_option("--spec", ph_spec, "phantom spec JSON")->required();
  ph_cmd->add_option("--out-prefix", ph_prefix, "output path prefix")->required();
  ph_cmd->callback([&]() { run_phantom(ph_spec, ph_prefix); });

  // train
  std::string tr_mode, tr_cases, tr_out;
  int tr_levels = 2, tr_channels = 4, tr_cap = 384, tr_classes = 1, tr_epochs = 0;
  std::uint64_t tr_seed = 0;
  double tr_lr0 = 5e-4, tr_lambda = 10.0, tr_k = 1500.0;
  auto* tr_cmd = app.add_subcommand("train", "optimize a network on cases");
  tr_cmd->add_option("--mode", tr_mode,
                     "dice-only | sdm-only | l1-joint | sdm-joint")->required();
  tr_cmd->add_option("--cases", tr_cases, "directory of *_image/_labels pairs")
      ->required();
  tr_cmd->add_option("--net-levels", tr_levels, "downsampling levels");
  tr_cmd->add_option("--channels", tr_channels, "initial channels");
  tr_cmd->add_option("--channel-cap", tr_cap, "channel cap");
  tr_cmd->add_option("--classes", tr_classes, "number of classes");
  tr_cmd->add_option("--epochs", tr_epochs, "training epochs")->required();
  tr_cmd->add_option("--seed", tr_seed, "run seed")->required();
  tr_cmd->add_option("--out", tr_out, "checkpoint directory")->required();
  tr_cmd->add_option("--lr0", tr_lr0, "initial learning rate");
  tr_cmd->add_option("--lambda", tr_lambda, "SDM loss weight");
  tr_cmd->add_option("--k", tr_k, "Heaviside steepness");
  tr_cmd->callback([&]() {
    run_train(tr_mode, tr_cases, tr_levels, tr_channels, tr_cap, tr_classes,
              tr_epochs, tr_seed, tr_out, tr_lr0, tr_lambda, tr_k);
  });

  // infer
  std::string inf_image, inf_ckpt, inf_prefix;
  auto* inf_cmd = app.add_subcommand("infer", "segment an image with a checkpoint");
  inf_cmd->add_option("--image", inf_image, "input image volume")->required();
  inf_cmd->add_option("--ckpt", inf_ckpt, "checkpoint file")->required();
  inf_cmd->add_option("--out-prefix", inf_prefix, "output path prefix")->required();
  inf_cmd->callback([&]() { run_infer(inf_image, inf_ckpt, inf_prefix); });

  // eval-loss
  std::vector<std::string> ev_pred, ev_gt;
  std::string ev_labels, ev_mode = "sdm-joint";
  double ev_k = 1500.0, ev_lambda = 10.0;
  auto* ev_cmd = app.add_subcommand("eval-loss", "print loss components");
  ev_cmd->add_option("--pred", ev_pred, "predicted field, one per class")
      ->required();
  ev_cmd->add_option("--gt-sdm", ev_gt, "groundtruth SDM, one per class");
  ev_cmd->add_option("--labels", ev_labels, "groundtruth labels")->required();
  ev_cmd->add_option("--mode", ev_mode, "loss mode");
  ev_cmd->add_option("--k", ev_k, "Heaviside steepness");
  ev_cmd->add_option("--lambda", ev_lambda, "SDM loss weight");
  ev_cmd->callback(
      [&]() { run_eval_loss(ev_pred, ev_gt, ev_labels, ev_mode, ev_k, ev_lambda); });

  // slice-dump
  std::string sd_in, sd_axis = "z", sd_out;
  int sd_index = 0;
  bool sd_plain = false;
  auto* sd_cmd = app.add_subcommand("slice-dump", "slice raster with contours");
  sd_cmd->add_option("--in", sd_in, "input volume")->required();
  sd_cmd->add_option("--axis", sd_axis, "slice axis x|y|z");
  sd_cmd->add_option("--index", sd_index, "slice index")->required();
  sd_cmd->add_option("--out", sd_out, "output PPM path")->required();
  sd_cmd->add_flag("--no-contours", sd_plain, "grayscale only");
  sd_cmd->callback(
      [&]() { run_slice_dump(sd_in, sd_axis, sd_index, sd_out, sd_plain); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
