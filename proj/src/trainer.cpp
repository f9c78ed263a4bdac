#include "sdm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "sdm/heaviside.hpp"
#include "sdm/rng.hpp"

namespace sdm {

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::DiceOnly: return "dice-only";
    case TrainMode::SdmOnly: return "sdm-only";
    case TrainMode::L1Joint: return "l1-joint";
    case TrainMode::SdmJoint: return "sdm-joint";
  }
  throw ValidationError("unknown train mode");
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "dice-only") return TrainMode::DiceOnly;
  if (name == "sdm-only") return TrainMode::SdmOnly;
  if (name == "l1-joint") return TrainMode::L1Joint;
  if (name == "sdm-joint") return TrainMode::SdmJoint;
  throw ValidationError("unknown train mode \"" + name + "\"");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ValidationError("train lr0 must be > 0");
  if (epochs < 1) throw ValidationError("train epochs must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ValidationError("train lr_decay must lie in (0, 1]");
  }
  if (lr_step_epochs < 1) {
    throw ValidationError("train lr_step_epochs must be >= 1");
  }
  if (!(lambda >= 0.0)) throw ValidationError("train lambda must be >= 0");
  if (!(heaviside_k > 0.0)) throw ValidationError("train heaviside_k must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train adam_eps must be > 0");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValidationError("epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.lr_decay, double(epoch / cfg.lr_step_epochs));
}

template <class T>
void adam_init(AdamState<T>& state, const Parameters<T>& params) {
  state.m.clear();
  state.v.clear();
  state.t = 0;
  for (const auto& p : params.items()) {
    state.m.emplace_back(p.shape.numel(), 0.0);
    state.v.emplace_back(p.shape.numel(), 0.0);
  }
}

template <class T>
void adam_step(Parameters<T>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  if (state.m.size() != params.items().size()) {
    throw ValidationError("adam state does not match the parameter store");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    auto& p = params.items()[i];
    if (!p.grad) throw ValidationError("adam_step requires gradient buffers");
    auto& m = state.m[i];
    auto& v = state.v[i];
    T* w = p.value->data();
    const T* g = p.grad->data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = double(g[j]);
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] = static_cast<T>(double(w[j]) -
                            lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

template void adam_init(AdamState<float>&, const Parameters<float>&);
template void adam_init(AdamState<double>&, const Parameters<double>&);
template void adam_step(Parameters<float>&, AdamState<float>&, double,
                        const TrainConfig&);
template void adam_step(Parameters<double>&, AdamState<double>&, double,
                        const TrainConfig&);

namespace {

struct PreparedCase {
  Shape5 input_shape;
  std::vector<float> image;
  std::vector<double> gt_sdm;   // class-major
  std::vector<double> onehot;   // class-major
  std::size_t voxels = 0;
};

PreparedCase prepare_case(const TrainCase& c, int num_classes) {
  c.image.validate_shape();
  c.labels.validate();
  if (!same_grid(c.image.dims, c.image.spacing, c.labels.dims, c.labels.spacing)) {
    throw ValidationError("train case image and labels disagree on grid");
  }
  if (c.labels.num_classes != num_classes) {
    throw ValidationError("train case class count does not match the network");
  }
  if (c.gt_sdm.fields.size() != std::size_t(num_classes)) {
    throw ValidationError("train case SDM field count does not match the network");
  }
  PreparedCase p;
  p.voxels = c.image.dims.voxels();
  p.input_shape = Shape5{1, 1, c.image.dims.nx, c.image.dims.ny, c.image.dims.nz};
  p.image.resize(p.voxels);
  for (std::size_t i = 0; i < p.voxels; ++i) {
    p.image[i] = float(c.image.data[i]);
  }
  p.gt_sdm.resize(std::size_t(num_classes) * p.voxels);
  for (int t = 0; t < num_classes; ++t) {
    const ScalarVolume& f = c.gt_sdm.fields[std::size_t(t)];
    if (!same_grid(f.dims, f.spacing, c.image.dims, c.image.spacing)) {
      throw ValidationError("train case SDM field disagrees on grid");
    }
    std::memcpy(p.gt_sdm.data() + std::size_t(t) * p.voxels, f.data.data(),
                p.voxels * sizeof(double));
  }
  p.onehot.resize(std::size_t(num_classes) * p.voxels);
  for (int t = 0; t < num_classes; ++t) {
    const ScalarVolume oh = one_hot(c.labels, t + 1);
    std::memcpy(p.onehot.data() + std::size_t(t) * p.voxels, oh.data.data(),
                p.voxels * sizeof(double));
  }
  return p;
}

// Loss and head-gradient for one case. Head values arrive as float, the
// loss math runs in double, the gradient goes back as the float seed.
LossComponents case_loss(const std::vector<float>& head, const PreparedCase& pc,
                         const TrainConfig& cfg, int num_classes,
                         std::vector<float>* grad_out) {
  const std::size_t n = head.size();
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = double(head[i]);

  LossConfig lc;
  lc.num_classes = num_classes;
  lc.lambda = cfg.lambda;
  HeavisideConfig hc;
  hc.k = cfg.heaviside_k;

  LossComponents out;
  std::vector<double> grad;
  switch (cfg.mode) {
    case TrainMode::DiceOnly: {
      LossResult<double> r = dice_loss(p.data(), pc.onehot.data(), pc.voxels, lc);
      out.dice = r.value;
      out.total = r.value;
      grad = std::move(r.grad);
      break;
    }
    case TrainMode::SdmOnly: {
      SdmLossResult<double> r = sdm_loss(p.data(), pc.gt_sdm.data(), pc.voxels, lc);
      out.product = r.product;
      out.l1 = r.l1;
      out.total = r.value;
      grad = std::move(r.grad);
      break;
    }
    case TrainMode::L1Joint: {
      std::vector<double> seg(n);
      for (std::size_t i = 0; i < n; ++i) seg[i] = smooth_step(-p[i], hc);
      LossResult<double> d = dice_loss(seg.data(), pc.onehot.data(), pc.voxels, lc);
      LossResult<double> l1 = l1_loss(p.data(), pc.gt_sdm.data(), pc.voxels, lc);
      out.dice = d.value;
      out.l1 = l1.value;
      out.total = d.value + cfg.lambda * l1.value;
      grad.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        grad[i] = d.grad[i] * -smooth_step_grad(-p[i], hc) +
                  cfg.lambda * l1.grad[i];
      }
      break;
    }
    case TrainMode::SdmJoint: {
      JointResult<double> r = joint_loss(p.data(), pc.gt_sdm.data(),
                                         pc.onehot.data(), pc.voxels, hc, lc);
      out.dice = r.components.dice;
      out.l1 = r.components.l1;
      out.product = r.components.product;
      out.total = r.components.total;
      grad = std::move(r.grad);
      break;
    }
  }
  if (grad_out) {
    grad_out->resize(n);
    for (std::size_t i = 0; i < n; ++i) (*grad_out)[i] = float(grad[i]);
  }
  return out;
}

std::vector<float> forward_head(UNet<float>& net, Tape<float>& tape,
                                const PreparedCase& pc, Tensor<float>* head_out) {
  Tensor<float> input = tape.leaf(pc.input_shape, pc.image, false);
  Tensor<float> head = net.forward(tape, input);
  if (head_out) *head_out = head;
  return *head.val;
}

LossComponents accumulate(LossComponents acc, const LossComponents& x) {
  auto addopt = [](std::optional<double>& a, const std::optional<double>& b) {
    if (b) a = a.value_or(0.0) + *b;
  };
  addopt(acc.dice, x.dice);
  addopt(acc.l1, x.l1);
  addopt(acc.product, x.product);
  acc.total += x.total;
  return acc;
}

LossComponents divide(LossComponents acc, double n) {
  if (acc.dice) *acc.dice /= n;
  if (acc.l1) *acc.l1 /= n;
  if (acc.product) *acc.product /= n;
  acc.total /= n;
  return acc;
}

}  // namespace

LossComponents evaluate(UNet<float>& net, const std::vector<TrainCase>& cases,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (cases.empty()) throw ValidationError("evaluate needs at least one case");
  const int nc = net.config().num_classes;
  LossComponents acc;
  for (const TrainCase& c : cases) {
    const PreparedCase pc = prepare_case(c, nc);
    Tape<float> tape;
    const std::vector<float> head = forward_head(net, tape, pc, nullptr);
    acc = accumulate(acc, case_loss(head, pc, cfg, nc, nullptr));
  }
  return divide(acc, double(cases.size()));
}

TrainResult train(const std::vector<TrainCase>& cases, NetworkConfig net_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (cases.empty()) throw ValidationError("train needs at least one case");
  net_cfg.head = cfg.mode == TrainMode::DiceOnly ? HeadKind::SegSigmoid
                                                 : HeadKind::SdmTanh;
  net_cfg.validate();

  const int div = 1 << net_cfg.levels;
  for (const TrainCase& c : cases) {
    const Dims& d = c.image.dims;
    if (d.nx % div || d.ny % div || d.nz % div) {
      throw ValidationError("train case dims must be divisible by " +
                            std::to_string(div));
    }
    if (!same_grid(d, c.image.spacing, cases[0].image.dims,
                   cases[0].image.spacing)) {
      throw ValidationError("train cases disagree on grid");
    }
  }

  std::vector<PreparedCase> prepared;
  prepared.reserve(cases.size());
  for (const TrainCase& c : cases) {
    prepared.push_back(prepare_case(c, net_cfg.num_classes));
  }

  TrainResult result{UNet<float>(net_cfg, Rng::derive(cfg.seed, 0)), TrainLog{}};
  UNet<float>& net = result.net;
  net.parameters().ensure_grads();
  AdamState<float> adam;
  adam_init(adam, net.parameters());

  result.log.mode = train_mode_name(cfg.mode);
  result.log.beta1 = cfg.beta1;
  result.log.beta2 = cfg.beta2;
  result.log.adam_eps = cfg.adam_eps;

  std::vector<std::size_t> order(cases.size());
  std::vector<float> grad_seed;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(e, cfg);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(Rng::derive(cfg.seed, 1 + std::uint64_t(e)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = std::size_t(shuffle_rng.uniform_int(0, i - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t idx : order) {
      const PreparedCase& pc = prepared[idx];
      Tape<float> tape;
      Tensor<float> head;
      const std::vector<float> head_vals = forward_head(net, tape, pc, &head);
      case_loss(head_vals, pc, cfg, net_cfg.num_classes, &grad_seed);
      tape.backward(head, grad_seed);
      adam_step(net.parameters(), adam, lr, cfg);
      net.parameters().zero_grads();
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.loss = evaluate(net, cases, cfg);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.log.epochs.push_back(rec);
  }
  return result;
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "# mode=" + log.mode;
  char buf[256];
  std::snprintf(buf, sizeof(buf), " adam_beta1=%g adam_beta2=%g adam_eps=%g\n",
                log.beta1, log.beta2, log.adam_eps);
  out += buf;
  out += "epoch,lr,dice_loss,l1_loss,product_loss,total\n";
  auto field = [&](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    char b[64];
    std::snprintf(b, sizeof(b), "%.17g", *v);
    return b;
  };
  for (const EpochRecord& r : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,", r.epoch, r.lr);
    out += buf;
    out += field(r.loss.dice) + "," + field(r.loss.l1) + "," +
           field(r.loss.product) + ",";
    std::snprintf(buf, sizeof(buf), "%.17g\n", r.loss.total);
    out += buf;
  }
  return out;
}

LabelVolume labels_from_sdm_fields(const std::vector<ScalarVolume>& fields) {
  if (fields.empty()) throw ValidationError("no SDM fields to segment");
  LabelVolume out;
  out.dims = fields[0].dims;
  out.spacing = fields[0].spacing;
  out.num_classes = int(fields.size());
  out.data.assign(out.dims.voxels(), 0);
  for (std::size_t t = 0; t < fields.size(); ++t) {
    if (!same_grid(fields[t].dims, fields[t].spacing, out.dims, out.spacing)) {
      throw ValidationError("SDM fields disagree on grid");
    }
  }
  const std::size_t n = out.dims.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int label = 0;
    for (std::size_t t = 0; t < fields.size(); ++t) {
      const double v = fields[t].data[i];
      if (v < best) {
        best = v;
        label = int(t) + 1;
      }
    }
    out.data[i] = std::uint8_t(label);
  }
  return out;
}

LabelVolume labels_from_prob_fields(const std::vector<ScalarVolume>& fields) {
  if (fields.empty()) throw ValidationError("no probability fields to segment");
  LabelVolume out;
  out.dims = fields[0].dims;
  out.spacing = fields[0].spacing;
  out.num_classes = int(fields.size());
  out.data.assign(out.dims.voxels(), 0);
  for (std::size_t t = 0; t < fields.size(); ++t) {
    if (!same_grid(fields[t].dims, fields[t].spacing, out.dims, out.spacing)) {
      throw ValidationError("probability fields disagree on grid");
    }
  }
  const std::size_t n = out.dims.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.5;
    int label = 0;
    for (std::size_t t = 0; t < fields.size(); ++t) {
      const double v = fields[t].data[i];
      if (v > best) {
        best = v;
        label = int(t) + 1;
      }
    }
    out.data[i] = std::uint8_t(label);
  }
  return out;
}

InferResult infer(const ScalarVolume& image, UNet<float>& net) {
  image.validate_shape();
  const Dims& d = image.dims;
  const int div = 1 << net.config().levels;
  if (d.nx % div || d.ny % div || d.nz % div) {
    throw ValidationError("network input dims must be divisible by " +
                          std::to_string(div));
  }
  const std::size_t n = d.voxels();
  std::vector<float> img(n);
  for (std::size_t i = 0; i < n; ++i) img[i] = float(image.data[i]);

  Tape<float> tape;
  Tensor<float> input = tape.leaf(Shape5{1, 1, d.nx, d.ny, d.nz}, img, false);
  Tensor<float> head = net.forward(tape, input);

  InferResult out;
  out.fields_are_sdm = net.config().head == HeadKind::SdmTanh;
  const int nc = net.config().num_classes;
  out.fields.reserve(std::size_t(nc));
  for (int t = 0; t < nc; ++t) {
    ScalarVolume f = make_scalar_volume(d, image.spacing, 0.0);
    const float* src = head.data() + std::size_t(t) * n;
    for (std::size_t i = 0; i < n; ++i) f.data[i] = double(src[i]);
    out.fields.push_back(std::move(f));
  }
  out.labels = out.fields_are_sdm ? labels_from_sdm_fields(out.fields)
                                  : labels_from_prob_fields(out.fields);
  return out;
}

}  // namespace sdm
