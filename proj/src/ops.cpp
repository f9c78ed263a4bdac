#include "sdm/ops.hpp"

#include <cmath>

namespace sdm {

namespace {

std::size_t chan_stride(const Shape5& s) { return s.spatial(); }

// First/last output index o with 0 <= o*stride + d - pad <= in_len-1.
int tap_lo(int d, int pad, int stride) {
  int lo = 0;
  while (lo * stride + d - pad < 0) ++lo;
  return lo;
}
int tap_hi(int out_len, int in_len, int d, int pad, int stride) {
  int hi = out_len - 1;
  while (hi >= 0 && hi * stride + d - pad > in_len - 1) --hi;
  return hi;
}

}  // namespace

template <class T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride) {
  const Shape5& is = input.shape;
  const Shape5& ks = kernel.shape;
  const int k = ks.x;
  if (ks.y != k || ks.z != k) {
    throw ValidationError("conv3d kernel must be cubic, got " + ks.str());
  }
  if (!((k == 3 && stride == 1) || (k == 2 && stride == 2))) {
    throw ValidationError("conv3d supports 3^3 stride 1 or 2^3 stride 2 only");
  }
  if (ks.c != is.c) {
    throw ValidationError("conv3d channel mismatch: input " + is.str() +
                          " kernel " + ks.str());
  }
  const int co = ks.n, ci = ks.c;
  if (!(bias.shape == Shape5{1, co, 1, 1, 1})) {
    throw ValidationError("conv3d bias shape must be 1x" + std::to_string(co) +
                          "x1x1x1, got " + bias.shape.str());
  }
  const int pad = (k == 3) ? 1 : 0;
  auto out_len = [&](int in_len) { return (in_len + 2 * pad - k) / stride + 1; };
  Shape5 os{is.n, co, out_len(is.x), out_len(is.y), out_len(is.z)};
  if (os.x < 1 || os.y < 1 || os.z < 1) {
    throw ValidationError("conv3d input too small: " + is.str());
  }

  const bool track = input.tracked() || kernel.tracked() || bias.tracked();
  Tensor<T> out = tape.result(os, track);

  const std::size_t in_cs = chan_stride(is), out_cs = chan_stride(os);
  const int IX = is.x, IY = is.y, IZ = is.z;
  const int OX = os.x, OY = os.y, OZ = os.z;

  {
    const T* iv = input.data();
    const T* kv = kernel.data();
    const T* bv = bias.data();
    T* ov = out.data();
    for (int b = 0; b < is.n; ++b) {
      for (int oc = 0; oc < co; ++oc) {
        T* oat = ov + (std::size_t(b) * co + oc) * out_cs;
        const T bias_v = bv[oc];
        for (std::size_t i = 0; i < out_cs; ++i) oat[i] = bias_v;
        for (int icc = 0; icc < ci; ++icc) {
          const T* iat = iv + (std::size_t(b) * ci + icc) * in_cs;
          const T* kat = kv + ((std::size_t(oc) * ci + icc) * k * k * k);
          for (int dz = 0; dz < k; ++dz) {
            const int zlo = tap_lo(dz, pad, stride);
            const int zhi = tap_hi(OZ, IZ, dz, pad, stride);
            for (int dy = 0; dy < k; ++dy) {
              const int ylo = tap_lo(dy, pad, stride);
              const int yhi = tap_hi(OY, IY, dy, pad, stride);
              for (int dx = 0; dx < k; ++dx) {
                const int xlo = tap_lo(dx, pad, stride);
                const int xhi = tap_hi(OX, IX, dx, pad, stride);
                const T w = kat[dx + k * (dy + k * dz)];
                for (int oz = zlo; oz <= zhi; ++oz) {
                  const int iz = oz * stride + dz - pad;
                  for (int oy = ylo; oy <= yhi; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    const T* irow = iat + IX * std::size_t(iy + IY * iz);
                    T* orow = oat + OX * std::size_t(oy + OY * oz);
                    for (int ox = xlo; ox <= xhi; ++ox) {
                      orow[ox] += w * irow[ox * stride + dx - pad];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  if (track) {
    auto ival = input.val, igrad = input.grad;
    auto kval = kernel.val, kgrad = kernel.grad;
    auto bgrad = bias.grad;
    auto ograd = out.grad;
    const int n = is.n;
    tape.record([=]() {
      const T* og = ograd->data();
      if (bgrad) {
        T* bg = bgrad->data();
        for (int b = 0; b < n; ++b) {
          for (int oc = 0; oc < co; ++oc) {
            const T* oat = og + (std::size_t(b) * co + oc) * out_cs;
            double acc = 0.0;
            for (std::size_t i = 0; i < out_cs; ++i) acc += double(oat[i]);
            bg[oc] += static_cast<T>(acc);
          }
        }
      }
      for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < co; ++oc) {
          const T* oat = og + (std::size_t(b) * co + oc) * out_cs;
          for (int icc = 0; icc < ci; ++icc) {
            const T* iat = ival->data() + (std::size_t(b) * ci + icc) * in_cs;
            T* igat = igrad ? igrad->data() + (std::size_t(b) * ci + icc) * in_cs
                            : nullptr;
            const std::size_t kbase = (std::size_t(oc) * ci + icc) * k * k * k;
            const T* kat = kval->data() + kbase;
            T* kgat = kgrad ? kgrad->data() + kbase : nullptr;
            for (int dz = 0; dz < k; ++dz) {
              const int zlo = tap_lo(dz, pad, stride);
              const int zhi = tap_hi(OZ, IZ, dz, pad, stride);
              for (int dy = 0; dy < k; ++dy) {
                const int ylo = tap_lo(dy, pad, stride);
                const int yhi = tap_hi(OY, IY, dy, pad, stride);
                for (int dx = 0; dx < k; ++dx) {
                  const int xlo = tap_lo(dx, pad, stride);
                  const int xhi = tap_hi(OX, IX, dx, pad, stride);
                  const T w = kat[dx + k * (dy + k * dz)];
                  double wacc = 0.0;
                  for (int oz = zlo; oz <= zhi; ++oz) {
                    const int iz = oz * stride + dz - pad;
                    for (int oy = ylo; oy <= yhi; ++oy) {
                      const int iy = oy * stride + dy - pad;
                      const T* irow = iat + IX * std::size_t(iy + IY * iz);
                      T* igrow = igat ? igat + IX * std::size_t(iy + IY * iz) : nullptr;
                      const T* ogrow = oat + OX * std::size_t(oy + OY * oz);
                      for (int ox = xlo; ox <= xhi; ++ox) {
                        const T g = ogrow[ox];
                        if (igrow) igrow[ox * stride + dx - pad] += w * g;
                        wacc += double(irow[ox * stride + dx - pad]) * double(g);
                      }
                    }
                  }
                  if (kgat) kgat[dx + k * (dy + k * dz)] += static_cast<T>(wacc);
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& input, int groups,
                     const Tensor<T>& scale, const Tensor<T>& shift, double eps) {
  const Shape5& is = input.shape;
  if (groups < 1 || is.c % groups != 0) {
    throw ValidationError("group_norm: channels " + std::to_string(is.c) +
                          " not divisible by groups " + std::to_string(groups));
  }
  const Shape5 affine{1, is.c, 1, 1, 1};
  if (!(scale.shape == affine) || !(shift.shape == affine)) {
    throw ValidationError("group_norm: scale/shift must be 1x" +
                          std::to_string(is.c) + "x1x1x1");
  }
  const bool track = input.tracked() || scale.tracked() || shift.tracked();
  Tensor<T> out = tape.result(is, track);

  const int cpg = is.c / groups;
  const std::size_t sp = is.spatial();
  const std::size_t m = std::size_t(cpg) * sp;
  auto stats = std::make_shared<std::vector<double>>(std::size_t(is.n) * groups * 2);

  {
    const T* iv = input.data();
    const T* sv = scale.data();
    const T* hv = shift.data();
    T* ov = out.data();
    for (int b = 0; b < is.n; ++b) {
      for (int g = 0; g < groups; ++g) {
        const T* base = iv + (std::size_t(b) * is.c + std::size_t(g) * cpg) * sp;
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          sum += double(base[i]);
          sq += double(base[i]) * double(base[i]);
        }
        const double mean = sum / double(m);
        const double var = sq / double(m) - mean * mean;
        const double invstd = 1.0 / std::sqrt(var + eps);
        (*stats)[(std::size_t(b) * groups + g) * 2] = mean;
        (*stats)[(std::size_t(b) * groups + g) * 2 + 1] = invstd;
        for (int cc = 0; cc < cpg; ++cc) {
          const int c = g * cpg + cc;
          const T* irow = iv + (std::size_t(b) * is.c + c) * sp;
          T* orow = ov + (std::size_t(b) * is.c + c) * sp;
          const double sc = double(sv[c]), sh = double(hv[c]);
          for (std::size_t i = 0; i < sp; ++i) {
            orow[i] = static_cast<T>(sc * (double(irow[i]) - mean) * invstd + sh);
          }
        }
      }
    }
  }

  if (track) {
    auto ival = input.val, igrad = input.grad;
    auto sval = scale.val, sgrad = scale.grad;
    auto hgrad = shift.grad;
    auto ograd = out.grad;
    const int n = is.n, C = is.c;
    tape.record([=]() {
      const T* iv = ival->data();
      const T* sv = sval->data();
      const T* og = ograd->data();
      for (int b = 0; b < n; ++b) {
        for (int g = 0; g < groups; ++g) {
          const double mean = (*stats)[(std::size_t(b) * groups + g) * 2];
          const double invstd = (*stats)[(std::size_t(b) * groups + g) * 2 + 1];
          double s1 = 0.0, s2 = 0.0;
          for (int cc = 0; cc < cpg; ++cc) {
            const int c = g * cpg + cc;
            const T* irow = iv + (std::size_t(b) * C + c) * sp;
            const T* grow = og + (std::size_t(b) * C + c) * sp;
            const double sc = double(sv[c]);
            double dsc = 0.0, dsh = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
              const double xhat = (double(irow[i]) - mean) * invstd;
              const double dy = double(grow[i]);
              s1 += dy * sc;
              s2 += dy * sc * xhat;
              dsc += dy * xhat;
              dsh += dy;
            }
            if (sgrad) (*sgrad)[c] += static_cast<T>(dsc);
            if (hgrad) (*hgrad)[c] += static_cast<T>(dsh);
          }
          if (!igrad) continue;
          const double inv_m = 1.0 / double(m);
          for (int cc = 0; cc < cpg; ++cc) {
            const int c = g * cpg + cc;
            const T* irow = iv + (std::size_t(b) * C + c) * sp;
            const T* grow = og + (std::size_t(b) * C + c) * sp;
            T* xg = igrad->data() + (std::size_t(b) * C + c) * sp;
            const double sc = double(sv[c]);
            for (std::size_t i = 0; i < sp; ++i) {
              const double xhat = (double(irow[i]) - mean) * invstd;
              const double dxhat = double(grow[i]) * sc;
              xg[i] += static_cast<T>(invstd * (dxhat - inv_m * (s1 + xhat * s2)));
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& input, double slope) {
  Tensor<T> out = tape.result(input.shape, input.tracked());
  const std::size_t n = input.numel();
  {
    const T* iv = input.data();
    T* ov = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      ov[i] = iv[i] >= T(0) ? iv[i] : static_cast<T>(slope * double(iv[i]));
    }
  }
  if (input.tracked()) {
    auto ival = input.val, igrad = input.grad;
    auto ograd = out.grad;
    tape.record([=]() {
      const T* iv = ival->data();
      const T* og = ograd->data();
      T* ig = igrad->data();
      for (std::size_t i = 0; i < n; ++i) {
        ig[i] += iv[i] >= T(0) ? og[i] : static_cast<T>(slope * double(og[i]));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> tanh_op(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out = tape.result(input.shape, input.tracked());
  const std::size_t n = input.numel();
  {
    const T* iv = input.data();
    T* ov = out.data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = std::tanh(iv[i]);
  }
  if (input.tracked()) {
    auto oval = out.val, ograd = out.grad;
    auto igrad = input.grad;
    tape.record([=]() {
      const T* ov = oval->data();
      const T* og = ograd->data();
      T* ig = igrad->data();
      for (std::size_t i = 0; i < n; ++i) {
        ig[i] += static_cast<T>(double(og[i]) * (1.0 - double(ov[i]) * double(ov[i])));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid_op(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out = tape.result(input.shape, input.tracked());
  const std::size_t n = input.numel();
  {
    const T* iv = input.data();
    T* ov = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double x = double(iv[i]);
      if (x >= 0.0) {
        ov[i] = static_cast<T>(1.0 / (1.0 + std::exp(-x)));
      } else {
        const double e = std::exp(x);
        ov[i] = static_cast<T>(e / (1.0 + e));
      }
    }
  }
  if (input.tracked()) {
    auto oval = out.val, ograd = out.grad;
    auto igrad = input.grad;
    tape.record([=]() {
      const T* ov = oval->data();
      const T* og = ograd->data();
      T* ig = igrad->data();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = double(ov[i]);
        ig[i] += static_cast<T>(double(og[i]) * s * (1.0 - s));
      }
    });
  }
  return out;
}

namespace {

// 1D doubling along one axis, align-corners-false:
//   out[2t]   = 0.25 in[t-1] + 0.75 in[t]   (in[-1] clamps to in[0])
//   out[2t+1] = 0.75 in[t]   + 0.25 in[t+1] (in[L] clamps to in[L-1])
template <class T>
void upsample_lines(const T* in, T* out, std::size_t lines, std::size_t len,
                    std::size_t in_line_stride, std::size_t out_line_stride,
                    std::size_t elem_stride) {
  for (std::size_t ln = 0; ln < lines; ++ln) {
    const T* src = in + ln * in_line_stride;
    T* dst = out + ln * out_line_stride;
    for (std::size_t t = 0; t < len; ++t) {
      const T prev = src[(t == 0 ? 0 : t - 1) * elem_stride];
      const T cur = src[t * elem_stride];
      const T next = src[(t + 1 == len ? t : t + 1) * elem_stride];
      dst[(2 * t) * elem_stride] =
          static_cast<T>(0.25 * double(prev) + 0.75 * double(cur));
      dst[(2 * t + 1) * elem_stride] =
          static_cast<T>(0.75 * double(cur) + 0.25 * double(next));
    }
  }
}

// Transpose of upsample_lines; accumulates into din.
template <class T>
void upsample_lines_backward(const T* dout, T* din, std::size_t lines,
                             std::size_t len, std::size_t in_line_stride,
                             std::size_t out_line_stride,
                             std::size_t elem_stride) {
  for (std::size_t ln = 0; ln < lines; ++ln) {
    const T* g = dout + ln * out_line_stride;
    T* d = din + ln * in_line_stride;
    for (std::size_t t = 0; t < len; ++t) {
      double acc = 0.75 * double(g[(2 * t) * elem_stride]) +
                   0.75 * double(g[(2 * t + 1) * elem_stride]);
      if (t == 0) acc += 0.25 * double(g[0]);
      if (t + 1 == len) acc += 0.25 * double(g[(2 * t + 1) * elem_stride]);
      if (t > 0) acc += 0.25 * double(g[(2 * t - 1) * elem_stride]);
      if (t + 1 < len) acc += 0.25 * double(g[(2 * t + 2) * elem_stride]);
      d[t * elem_stride] += static_cast<T>(acc);
    }
  }
}

// Axis pass over a whole (n*c, x, y, z) tensor. axis: 0=x, 1=y, 2=z.
template <class T>
void upsample_axis(const T* in, T* out, int nc, int X, int Y, int Z, int axis) {
  if (axis == 0) {
    upsample_lines(in, out, std::size_t(nc) * Y * Z, std::size_t(X),
                   std::size_t(X), std::size_t(2 * X), 1);
  } else if (axis == 1) {
    const std::size_t in_plane = std::size_t(X) * Y;
    const std::size_t out_plane = std::size_t(X) * 2 * Y;
    for (std::size_t p = 0; p < std::size_t(nc) * Z; ++p) {
      for (int x = 0; x < X; ++x) {
        upsample_lines(in + p * in_plane + x, out + p * out_plane + x, 1,
                       std::size_t(Y), 0, 0, std::size_t(X));
      }
    }
  } else {
    const std::size_t in_vol = std::size_t(X) * Y * Z;
    const std::size_t out_vol = std::size_t(X) * Y * 2 * Z;
    const std::size_t plane = std::size_t(X) * Y;
    for (int c = 0; c < nc; ++c) {
      for (std::size_t xy = 0; xy < plane; ++xy) {
        upsample_lines(in + c * in_vol + xy, out + c * out_vol + xy, 1,
                       std::size_t(Z), 0, 0, plane);
      }
    }
  }
}

template <class T>
void upsample_axis_backward(const T* dout, T* din, int nc, int X, int Y, int Z,
                            int axis) {
  if (axis == 0) {
    upsample_lines_backward(dout, din, std::size_t(nc) * Y * Z, std::size_t(X),
                            std::size_t(X), std::size_t(2 * X), 1);
  } else if (axis == 1) {
    const std::size_t in_plane = std::size_t(X) * Y;
    const std::size_t out_plane = std::size_t(X) * 2 * Y;
    for (std::size_t p = 0; p < std::size_t(nc) * Z; ++p) {
      for (int x = 0; x < X; ++x) {
        upsample_lines_backward(dout + p * out_plane + x, din + p * in_plane + x,
                                1, std::size_t(Y), 0, 0, std::size_t(X));
      }
    }
  } else {
    const std::size_t in_vol = std::size_t(X) * Y * Z;
    const std::size_t out_vol = std::size_t(X) * Y * 2 * Z;
    const std::size_t plane = std::size_t(X) * Y;
    for (int c = 0; c < nc; ++c) {
      for (std::size_t xy = 0; xy < plane; ++xy) {
        upsample_lines_backward(dout + c * out_vol + xy, din + c * in_vol + xy,
                                1, std::size_t(Z), 0, 0, plane);
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> trilinear_upsample2(Tape<T>& tape, const Tensor<T>& input) {
  const Shape5& is = input.shape;
  const Shape5 os{is.n, is.c, 2 * is.x, 2 * is.y, 2 * is.z};
  Tensor<T> out = tape.result(os, input.tracked());
  const int nc = is.n * is.c;

  {
    std::vector<T> t1(std::size_t(nc) * 2 * is.x * is.y * is.z);
    std::vector<T> t2(std::size_t(nc) * 2 * is.x * 2 * is.y * is.z);
    upsample_axis(input.data(), t1.data(), nc, is.x, is.y, is.z, 0);
    upsample_axis(t1.data(), t2.data(), nc, 2 * is.x, is.y, is.z, 1);
    upsample_axis(t2.data(), out.data(), nc, 2 * is.x, 2 * is.y, is.z, 2);
  }

  if (input.tracked()) {
    auto igrad = input.grad;
    auto ograd = out.grad;
    const int X = is.x, Y = is.y, Z = is.z;
    tape.record([=]() {
      std::vector<T> g2(std::size_t(nc) * 2 * X * 2 * Y * Z, T(0));
      std::vector<T> g1(std::size_t(nc) * 2 * X * Y * Z, T(0));
      upsample_axis_backward(ograd->data(), g2.data(), nc, 2 * X, 2 * Y, Z, 2);
      upsample_axis_backward(g2.data(), g1.data(), nc, 2 * X, Y, Z, 1);
      upsample_axis_backward(g1.data(), igrad->data(), nc, X, Y, Z, 0);
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape5& as = a.shape;
  const Shape5& bs = b.shape;
  if (as.n != bs.n || as.x != bs.x || as.y != bs.y || as.z != bs.z) {
    throw ValidationError("concat_channels: shapes " + as.str() + " and " +
                          bs.str() + " differ outside the channel axis");
  }
  const Shape5 os{as.n, as.c + bs.c, as.x, as.y, as.z};
  const bool track = a.tracked() || b.tracked();
  Tensor<T> out = tape.result(os, track);
  const std::size_t sp = as.spatial();
  const std::size_t ablock = std::size_t(as.c) * sp;
  const std::size_t bblock = std::size_t(bs.c) * sp;

  {
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (int n = 0; n < as.n; ++n) {
      std::copy_n(av + n * ablock, ablock, ov + n * (ablock + bblock));
      std::copy_n(bv + n * bblock, bblock, ov + n * (ablock + bblock) + ablock);
    }
  }

  if (track) {
    auto agrad = a.grad, bgrad = b.grad, ograd = out.grad;
    const int n_batch = as.n;
    tape.record([=]() {
      const T* og = ograd->data();
      for (int n = 0; n < n_batch; ++n) {
        const T* src = og + n * (ablock + bblock);
        if (agrad) {
          T* ag = agrad->data() + n * ablock;
          for (std::size_t i = 0; i < ablock; ++i) ag[i] += src[i];
        }
        if (bgrad) {
          T* bg = bgrad->data() + n * bblock;
          for (std::size_t i = 0; i < bblock; ++i) bg[i] += src[ablock + i];
        }
      }
    });
  }
  return out;
}

template Tensor<float> conv3d(Tape<float>&, const Tensor<float>&,
                              const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> conv3d(Tape<double>&, const Tensor<double>&,
                               const Tensor<double>&, const Tensor<double>&, int);
template Tensor<float> group_norm(Tape<float>&, const Tensor<float>&, int,
                                  const Tensor<float>&, const Tensor<float>&,
                                  double);
template Tensor<double> group_norm(Tape<double>&, const Tensor<double>&, int,
                                   const Tensor<double>&, const Tensor<double>&,
                                   double);
template Tensor<float> leaky_relu(Tape<float>&, const Tensor<float>&, double);
template Tensor<double> leaky_relu(Tape<double>&, const Tensor<double>&, double);
template Tensor<float> tanh_op(Tape<float>&, const Tensor<float>&);
template Tensor<double> tanh_op(Tape<double>&, const Tensor<double>&);
template Tensor<float> sigmoid_op(Tape<float>&, const Tensor<float>&);
template Tensor<double> sigmoid_op(Tape<double>&, const Tensor<double>&);
template Tensor<float> trilinear_upsample2(Tape<float>&, const Tensor<float>&);
template Tensor<double> trilinear_upsample2(Tape<double>&, const Tensor<double>&);
template Tensor<float> concat_channels(Tape<float>&, const Tensor<float>&,
                                       const Tensor<float>&);
template Tensor<double> concat_channels(Tape<double>&, const Tensor<double>&,
                                        const Tensor<double>&);

}  // namespace sdm
