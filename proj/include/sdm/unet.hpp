#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sdm/ops.hpp"
#include "sdm/tensor.hpp"

namespace sdm {

enum class HeadKind : std::uint8_t { SdmTanh, SegSigmoid };

struct NetworkConfig {
  int levels = 2;
  int init_channels = 4;
  int channel_cap = 384;
  int num_classes = 1;
  HeadKind head = HeadKind::SdmTanh;
  double leaky_slope = 0.01;
  double gn_eps = 1e-5;

  void validate() const;
  // Channels double per level, clamped at channel_cap.
  int channels_at(int level) const;
  // min(8, channels), falling back to 1 when that does not divide evenly.
  static int groups_for(int channels);
  // Spatial reduction at the bottleneck; input dims must divide by this.
  int downsample_factor() const { return 1 << levels; }
};

enum class ParamKind : std::uint8_t { ConvWeight, ConvBias, NormScale, NormShift };

template <class T>
struct Param {
  std::string name;
  Shape5 shape;
  ParamKind kind = ParamKind::ConvWeight;
  std::shared_ptr<std::vector<T>> value;
  std::shared_ptr<std::vector<T>> grad;  // allocated by ensure_grads()
};

// Insertion-ordered parameter store; iteration order is the forward-pass
// traversal order and stays fixed for a given NetworkConfig.
template <class T>
class Parameters {
 public:
  Param<T>& add(const std::string& name, const Shape5& shape, ParamKind kind);
  Param<T>* find(const std::string& name);
  const Param<T>* find(const std::string& name) const;
  std::vector<Param<T>>& items() { return items_; }
  const std::vector<Param<T>>& items() const { return items_; }
  std::size_t scalar_count() const;
  void ensure_grads();
  void zero_grads();

 private:
  std::vector<Param<T>> items_;
};

// Encoder of strided-conv downsamplings, decoder of trilinear upsample +
// conv with skip concatenations, conv head with tanh or logistic output.
// Two 3x3x3 conv + group-norm + leaky-relu blocks per scale.
template <class T>
class UNet {
 public:
  UNet(const NetworkConfig& cfg, std::uint64_t seed);

  // Gradients flow into parameters iff ensure_grads() has been called on
  // the store; the input tensor may track or not independently.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& input);

  const NetworkConfig& config() const { return cfg_; }
  Parameters<T>& parameters() { return params_; }
  const Parameters<T>& parameters() const { return params_; }

 private:
  Tensor<T> conv_block(Tape<T>& tape, const Tensor<T>& x,
                       const std::string& conv_name, const std::string& gn_name,
                       int stride);
  Tensor<T> attach(Tape<T>& tape, const std::string& name);

  NetworkConfig cfg_;
  Parameters<T> params_;
};

// Single-file checkpoint: one JSON header line (config + ordered param
// names/shapes, dtype f32) followed by the concatenated little-endian
// float32 payload.
void save_checkpoint(const std::string& path, const UNet<float>& net);
UNet<float> load_checkpoint(const std::string& path);

std::string head_kind_name(HeadKind head);
HeadKind head_kind_from_name(const std::string& name);

}  // namespace sdm
