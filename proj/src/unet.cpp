#include "sdm/unet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sdm/rng.hpp"
#include "sdm/volume_io.hpp"

namespace sdm {

using json = nlohmann::json;

void NetworkConfig::validate() const {
  if (levels < 1) throw ValidationError("network levels must be >= 1");
  if (init_channels < 1) throw ValidationError("network init_channels must be >= 1");
  if (channel_cap < init_channels) {
    throw ValidationError("network channel_cap must be >= init_channels");
  }
  if (num_classes < 1) throw ValidationError("network num_classes must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
    throw ValidationError("network leaky_slope must lie in [0, 1)");
  }
  if (!(gn_eps > 0.0)) throw ValidationError("network gn_eps must be > 0");
}

int NetworkConfig::channels_at(int level) const {
  long long c = init_channels;
  for (int l = 0; l < level; ++l) c *= 2;
  return int(std::min<long long>(c, channel_cap));
}

int NetworkConfig::groups_for(int channels) {
  const int g = std::min(8, channels);
  return channels % g == 0 ? g : 1;
}

template <class T>
Param<T>& Parameters<T>::add(const std::string& name, const Shape5& shape,
                             ParamKind kind) {
  if (find(name)) throw ValidationError("duplicate parameter name " + name);
  Param<T> p;
  p.name = name;
  p.shape = shape;
  p.kind = kind;
  p.value = std::make_shared<std::vector<T>>(shape.numel(), T(0));
  items_.push_back(std::move(p));
  return items_.back();
}

template <class T>
Param<T>* Parameters<T>::find(const std::string& name) {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <class T>
const Param<T>* Parameters<T>::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <class T>
std::size_t Parameters<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.shape.numel();
  return n;
}

template <class T>
void Parameters<T>::ensure_grads() {
  for (auto& p : items_) {
    if (!p.grad) p.grad = std::make_shared<std::vector<T>>(p.shape.numel(), T(0));
  }
}

template <class T>
void Parameters<T>::zero_grads() {
  for (auto& p : items_) {
    if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
  }
}

namespace {

template <class T>
void add_conv(Parameters<T>& params, const std::string& name, int co, int ci,
              int k) {
  params.add(name + ".w", Shape5{co, ci, k, k, k}, ParamKind::ConvWeight);
  params.add(name + ".b", Shape5{1, co, 1, 1, 1}, ParamKind::ConvBias);
}

template <class T>
void add_gn(Parameters<T>& params, const std::string& name, int c) {
  params.add(name + ".g", Shape5{1, c, 1, 1, 1}, ParamKind::NormScale);
  params.add(name + ".b", Shape5{1, c, 1, 1, 1}, ParamKind::NormShift);
}

}  // namespace

template <class T>
UNet<T>::UNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.levels;
  add_conv(params_, "enc0.conv1", cfg_.channels_at(0), 1, 3);
  add_gn(params_, "enc0.gn1", cfg_.channels_at(0));
  add_conv(params_, "enc0.conv2", cfg_.channels_at(0), cfg_.channels_at(0), 3);
  add_gn(params_, "enc0.gn2", cfg_.channels_at(0));
  for (int l = 1; l <= L; ++l) {
    const int ci = cfg_.channels_at(l - 1), co = cfg_.channels_at(l);
    const std::string ls = std::to_string(l);
    add_conv(params_, "down" + ls + ".conv", co, ci, 2);
    add_gn(params_, "down" + ls + ".gn", co);
    add_conv(params_, "enc" + ls + ".conv1", co, co, 3);
    add_gn(params_, "enc" + ls + ".gn1", co);
    add_conv(params_, "enc" + ls + ".conv2", co, co, 3);
    add_gn(params_, "enc" + ls + ".gn2", co);
  }
  for (int l = L; l >= 1; --l) {
    const int ci = cfg_.channels_at(l), co = cfg_.channels_at(l - 1);
    const std::string ls = std::to_string(l), ds = std::to_string(l - 1);
    add_conv(params_, "up" + ls + ".conv", co, ci, 3);
    add_gn(params_, "up" + ls + ".gn", co);
    add_conv(params_, "dec" + ds + ".conv1", co, 2 * co, 3);
    add_gn(params_, "dec" + ds + ".gn1", co);
    add_conv(params_, "dec" + ds + ".conv2", co, co, 3);
    add_gn(params_, "dec" + ds + ".gn2", co);
  }
  add_conv(params_, "head", cfg_.num_classes, cfg_.channels_at(0), 3);

  // Fan-in-scaled uniform init for conv kernels, gain adjusted for the
  // leaky-relu slope; biases 0; norm scale 1, shift 0.
  Rng rng(seed);
  const double gain =
      std::sqrt(2.0 / (1.0 + cfg_.leaky_slope * cfg_.leaky_slope));
  for (auto& p : params_.items()) {
    switch (p.kind) {
      case ParamKind::ConvWeight: {
        const double fan_in =
            double(p.shape.c) * p.shape.x * p.shape.y * p.shape.z;
        const double bound = gain * std::sqrt(3.0 / fan_in);
        for (T& v : *p.value) {
          v = static_cast<T>(rng.uniform(-bound, bound));
        }
        break;
      }
      case ParamKind::ConvBias:
      case ParamKind::NormShift:
        break;  // already zero
      case ParamKind::NormScale:
        std::fill(p.value->begin(), p.value->end(), T(1));
        break;
    }
  }
}

template <class T>
Tensor<T> UNet<T>::attach(Tape<T>& tape, const std::string& name) {
  Param<T>* p = params_.find(name);
  if (!p) throw ValidationError("unknown parameter " + name);
  return tape.attach(p->shape, p->value, p->grad);
}

template <class T>
Tensor<T> UNet<T>::conv_block(Tape<T>& tape, const Tensor<T>& x,
                              const std::string& conv_name,
                              const std::string& gn_name, int stride) {
  Tensor<T> w = attach(tape, conv_name + ".w");
  Tensor<T> b = attach(tape, conv_name + ".b");
  Tensor<T> y = conv3d(tape, x, w, b, stride);
  Tensor<T> g = attach(tape, gn_name + ".g");
  Tensor<T> h = attach(tape, gn_name + ".b");
  y = group_norm(tape, y, NetworkConfig::groups_for(y.shape.c), g, h, cfg_.gn_eps);
  return leaky_relu(tape, y, cfg_.leaky_slope);
}

template <class T>
Tensor<T> UNet<T>::forward(Tape<T>& tape, const Tensor<T>& input) {
  const Shape5& s = input.shape;
  if (s.c != 1) {
    throw ValidationError("network input must have 1 channel, got " + s.str());
  }
  const int div = 1 << cfg_.levels;
  if (s.x % div || s.y % div || s.z % div) {
    throw ValidationError("network input dims must be divisible by " +
                          std::to_string(div) + ", got " + s.str());
  }
  const int L = cfg_.levels;
  std::vector<Tensor<T>> skips;
  Tensor<T> x = conv_block(tape, input, "enc0.conv1", "enc0.gn1", 1);
  x = conv_block(tape, x, "enc0.conv2", "enc0.gn2", 1);
  skips.push_back(x);
  for (int l = 1; l <= L; ++l) {
    const std::string ls = std::to_string(l);
    x = conv_block(tape, x, "down" + ls + ".conv", "down" + ls + ".gn", 2);
    x = conv_block(tape, x, "enc" + ls + ".conv1", "enc" + ls + ".gn1", 1);
    x = conv_block(tape, x, "enc" + ls + ".conv2", "enc" + ls + ".gn2", 1);
    if (l < L) skips.push_back(x);
  }
  for (int l = L; l >= 1; --l) {
    const std::string ls = std::to_string(l), ds = std::to_string(l - 1);
    x = trilinear_upsample2(tape, x);
    x = conv_block(tape, x, "up" + ls + ".conv", "up" + ls + ".gn", 1);
    x = concat_channels(tape, x, skips[std::size_t(l - 1)]);
    x = conv_block(tape, x, "dec" + ds + ".conv1", "dec" + ds + ".gn1", 1);
    x = conv_block(tape, x, "dec" + ds + ".conv2", "dec" + ds + ".gn2", 1);
  }
  Tensor<T> hw = attach(tape, "head.w");
  Tensor<T> hb = attach(tape, "head.b");
  x = conv3d(tape, x, hw, hb, 1);
  return cfg_.head == HeadKind::SdmTanh ? tanh_op(tape, x) : sigmoid_op(tape, x);
}

std::string head_kind_name(HeadKind head) {
  return head == HeadKind::SdmTanh ? "sdm-tanh" : "seg-sigmoid";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "sdm-tanh") return HeadKind::SdmTanh;
  if (name == "seg-sigmoid") return HeadKind::SegSigmoid;
  throw ValidationError("unknown head kind \"" + name + "\"");
}

void save_checkpoint(const std::string& path, const UNet<float>& net) {
  const NetworkConfig& cfg = net.config();
  json header;
  header["format"] = "sdmseg-checkpoint-v1";
  header["dtype"] = "f32";
  header["config"] = {{"levels", cfg.levels},
                      {"init_channels", cfg.init_channels},
                      {"channel_cap", cfg.channel_cap},
                      {"num_classes", cfg.num_classes},
                      {"head", head_kind_name(cfg.head)},
                      {"leaky_slope", cfg.leaky_slope},
                      {"gn_eps", cfg.gn_eps}};
  json names = json::array();
  std::size_t total = 0;
  for (const auto& p : net.parameters().items()) {
    names.push_back({{"name", p.name},
                     {"shape", {p.shape.n, p.shape.c, p.shape.x, p.shape.y,
                                p.shape.z}}});
    total += p.shape.numel();
  }
  header["params"] = std::move(names);

  std::string blob = header.dump();
  blob += '\n';
  const std::size_t head_len = blob.size();
  blob.resize(head_len + total * sizeof(float));
  char* out = blob.data() + head_len;
  for (const auto& p : net.parameters().items()) {
    const std::size_t bytes = p.shape.numel() * sizeof(float);
    std::memcpy(out, p.value->data(), bytes);
    out += bytes;
  }
  write_file_atomic(path, blob.data(), blob.size());
}

UNet<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw IoError(path + ": missing checkpoint header");
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw IoError(path + ": invalid checkpoint header (" + e.what() + ")");
  }
  NetworkConfig cfg;
  try {
    if (header.at("format").get<std::string>() != "sdmseg-checkpoint-v1") {
      throw IoError(path + ": unknown checkpoint format");
    }
    if (header.at("dtype").get<std::string>() != "f32") {
      throw IoError(path + ": unsupported checkpoint dtype");
    }
    const json& c = header.at("config");
    cfg.levels = c.at("levels").get<int>();
    cfg.init_channels = c.at("init_channels").get<int>();
    cfg.channel_cap = c.at("channel_cap").get<int>();
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.head = head_kind_from_name(c.at("head").get<std::string>());
    cfg.leaky_slope = c.at("leaky_slope").get<double>();
    cfg.gn_eps = c.at("gn_eps").get<double>();
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed checkpoint header (" + e.what() + ")");
  }

  UNet<float> net(cfg, 0);
  const auto& listed = header.at("params");
  auto& items = net.parameters().items();
  if (!listed.is_array() || listed.size() != items.size()) {
    throw IoError(path + ": checkpoint parameter list does not match config");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const json& e = listed[i];
    const std::string name = e.at("name").get<std::string>();
    const auto& sh = e.at("shape");
    const Shape5 shape{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>(),
                       sh[3].get<int>(), sh[4].get<int>()};
    if (name != items[i].name || !(shape == items[i].shape)) {
      throw IoError(path + ": checkpoint parameter " + name +
                    " does not match the expected layout");
    }
    in.read(reinterpret_cast<char*>(items[i].value->data()),
            std::streamsize(shape.numel() * sizeof(float)));
    if (!in) throw IoError(path + ": truncated checkpoint payload");
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw IoError(path + ": trailing bytes after checkpoint payload");
  }
  return net;
}

template class Parameters<float>;
template class Parameters<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace sdm
