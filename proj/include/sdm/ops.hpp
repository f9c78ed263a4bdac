#pragma once

#include "sdm/tensor.hpp"

namespace sdm {

// All ops run forward eagerly and, when any input tracks gradients, record a
// backward closure on the tape. Backward closures accumulate (+=) into input
// gradient buffers, so buffers must start zeroed.

// Cross-correlation. kernel shape (co, ci, k, k, k); bias shape (1, co, 1, 1, 1).
// Supported geometries: k=3 stride 1 pad 1 (same size) and k=2 stride 2 pad 0
// (halved size).
template <class T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride);

// Per-(sample, group) standardization with per-channel affine. scale/shift
// shape (1, c, 1, 1, 1).
template <class T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& input, int groups,
                     const Tensor<T>& scale, const Tensor<T>& shift,
                     double eps = 1e-5);

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& input, double slope);

template <class T>
Tensor<T> tanh_op(Tape<T>& tape, const Tensor<T>& input);

template <class T>
Tensor<T> sigmoid_op(Tape<T>& tape, const Tensor<T>& input);

// Doubles each spatial axis, align-corners-false sampling.
template <class T>
Tensor<T> trilinear_upsample2(Tape<T>& tape, const Tensor<T>& input);

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

}  // namespace sdm
