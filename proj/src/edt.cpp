#include "sdm/edt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace sdm {

namespace {

constexpr double kBig = 1e30;        // "no site found yet" squared distance
constexpr double kBigThresh = 1e29;  // anything above this is treated as unset

struct Weights {
  double wx, wy, wz;
};

Weights weights_for(const Spacing& s, bool use_spacing) {
  if (use_spacing) {
    return {s.dx, s.dy, s.dz};
  }
  return {1.0, 1.0, 1.0};
}

// First pass: per x-line squared distance (in index steps) to the nearest
// foreground voxel within the line. Lines with no foreground stay at kBig.
void indicator_pass_x(const double* mask, double* out, const Dims& d, double wx) {
  const int nx = d.nx;
  const double w2 = wx * wx;
  const int far = std::numeric_limits<int>::max() / 4;
  std::vector<int> run(static_cast<std::size_t>(nx));
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      const std::size_t base = d.index(0, y, z);
      int r = far;
      for (int x = 0; x < nx; ++x) {
        r = mask[base + x] != 0.0 ? 0 : (r >= far ? far : r + 1);
        run[x] = r;
      }
      r = far;
      for (int x = nx - 1; x >= 0; --x) {
        r = mask[base + x] != 0.0 ? 0 : (r >= far ? far : r + 1);
        run[x] = std::min(run[x], r);
      }
      for (int x = 0; x < nx; ++x) {
        out[base + x] = run[x] >= far ? kBig
                                      : w2 * static_cast<double>(run[x]) *
                                            static_cast<double>(run[x]);
      }
    }
  }
}

// Felzenszwalb-Huttenlocher 1-D lower envelope over f(i) + w2*(q-i)^2,
// in place along a strided line. Vertices at kBig are skipped; if the whole
// line is unset it is left untouched.
struct ParabolicScratch {
  std::vector<double> ff;
  std::vector<int> v;
  std::vector<double> zr;
  void resize(int n) {
    ff.resize(static_cast<std::size_t>(n));
    v.resize(static_cast<std::size_t>(n));
    zr.resize(static_cast<std::size_t>(n) + 1);
  }
};

void parabolic_pass_line(double* f, int n, std::size_t stride, double w2,
                         ParabolicScratch& s) {
  for (int i = 0; i < n; ++i) {
    s.ff[i] = f[static_cast<std::size_t>(i) * stride];
  }
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (s.ff[q] >= kBigThresh) {
      continue;
    }
    if (k < 0) {
      k = 0;
      s.v[0] = q;
      s.zr[0] = -std::numeric_limits<double>::infinity();
      s.zr[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    double sect;
    for (;;) {
      const int p = s.v[k];
      sect = (s.ff[q] - s.ff[p] + w2 * (double(q) * q - double(p) * p)) /
             (2.0 * w2 * (q - p));
      if (k > 0 && sect <= s.zr[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    s.v[k] = q;
    s.zr[k] = sect;
    s.zr[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    return;  // no sites reach this line yet
  }
  k = 0;
  for (int i = 0; i < n; ++i) {
    while (s.zr[k + 1] < i) {
      ++k;
    }
    const int p = s.v[k];
    f[static_cast<std::size_t>(i) * stride] = w2 * double(i - p) * (i - p) + s.ff[p];
  }
}

// Lines are disjoint within each pass, so they could run in parallel without
// changing the result; execution here is sequential.
void parabolic_pass_y(double* f, const Dims& d, double wy, ParabolicScratch& s) {
  const double w2 = wy * wy;
  for (int z = 0; z < d.nz; ++z) {
    for (int x = 0; x < d.nx; ++x) {
      parabolic_pass_line(f + d.index(x, 0, z), d.ny, static_cast<std::size_t>(d.nx),
                          w2, s);
    }
  }
}

void parabolic_pass_z(double* f, const Dims& d, double wz, ParabolicScratch& s) {
  const double w2 = wz * wz;
  const std::size_t stride = static_cast<std::size_t>(d.nx) * d.ny;
  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) {
      parabolic_pass_line(f + d.index(x, y, 0), d.nz, stride, w2, s);
    }
  }
}

void separable_squared(const ScalarVolume& mask, const Weights& w, double* out) {
  indicator_pass_x(mask.data.data(), out, mask.dims, w.wx);
  ParabolicScratch scratch;
  scratch.resize(std::max(mask.dims.ny, mask.dims.nz));
  parabolic_pass_y(out, mask.dims, w.wy, scratch);
  parabolic_pass_z(out, mask.dims, w.wz, scratch);
}

// --------------------------------------------------------------------------
// Danielsson-style vector propagation: each voxel carries the offset to its
// claimed nearest site; raster sweeps (8SED per slice, both z directions)
// relax offsets from already-visited neighbours.
// --------------------------------------------------------------------------

struct VectorField {
  std::vector<std::int32_t> ox, oy, oz;
  std::vector<double> d2;
  const Dims* dims;
  Weights w;

  void try_neighbor(std::size_t v, std::size_t u, int dx, int dy, int dz) {
    if (d2[u] >= kBigThresh) {
      return;
    }
    const std::int32_t cx = ox[u] + dx;
    const std::int32_t cy = oy[u] + dy;
    const std::int32_t cz = oz[u] + dz;
    const double cand = double(cx) * cx * (w.wx * w.wx) +
                        double(cy) * cy * (w.wy * w.wy) +
                        double(cz) * cz * (w.wz * w.wz);
    if (cand < d2[v]) {
      d2[v] = cand;
      ox[v] = cx;
      oy[v] = cy;
      oz[v] = cz;
    }
  }
};

// One full 8SED sweep over a slice (four row scans).
void sed_slice(VectorField& f, int z) {
  const Dims& d = *f.dims;
  auto idx = [&](int x, int y) { return d.index(x, y, z); };
  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) {
      const std::size_t v = idx(x, y);
      if (y > 0) {
        f.try_neighbor(v, idx(x, y - 1), 0, 1, 0);
        if (x > 0) f.try_neighbor(v, idx(x - 1, y - 1), 1, 1, 0);
        if (x + 1 < d.nx) f.try_neighbor(v, idx(x + 1, y - 1), -1, 1, 0);
      }
      if (x > 0) f.try_neighbor(v, idx(x - 1, y), 1, 0, 0);
    }
    for (int x = d.nx - 1; x >= 0; --x) {
      if (x + 1 < d.nx) f.try_neighbor(idx(x, y), idx(x + 1, y), -1, 0, 0);
    }
  }
  for (int y = d.ny - 1; y >= 0; --y) {
    for (int x = 0; x < d.nx; ++x) {
      const std::size_t v = idx(x, y);
      if (y + 1 < d.ny) {
        f.try_neighbor(v, idx(x, y + 1), 0, -1, 0);
        if (x > 0) f.try_neighbor(v, idx(x - 1, y + 1), 1, -1, 0);
        if (x + 1 < d.nx) f.try_neighbor(v, idx(x + 1, y + 1), -1, -1, 0);
      }
      if (x > 0) f.try_neighbor(v, idx(x - 1, y), 1, 0, 0);
    }
    for (int x = d.nx - 1; x >= 0; --x) {
      if (x + 1 < d.nx) f.try_neighbor(idx(x, y), idx(x + 1, y), -1, 0, 0);
    }
  }
}

void vector_propagation_squared(const ScalarVolume& mask, const Weights& w,
                                double* out) {
  const Dims& d = mask.dims;
  const std::size_t n = d.voxels();
  VectorField f;
  f.dims = &d;
  f.w = w;
  f.ox.assign(n, 0);
  f.oy.assign(n, 0);
  f.oz.assign(n, 0);
  f.d2.assign(n, kBig);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.data[i] != 0.0) {
      f.d2[i] = 0.0;
    }
  }
  const std::size_t slice = static_cast<std::size_t>(d.nx) * d.ny;
  for (int z = 0; z < d.nz; ++z) {
    if (z > 0) {
      const std::size_t base = slice * static_cast<std::size_t>(z);
      for (std::size_t i = 0; i < slice; ++i) {
        f.try_neighbor(base + i, base + i - slice, 0, 0, 1);
      }
    }
    sed_slice(f, z);
  }
  for (int z = d.nz - 1; z >= 0; --z) {
    if (z + 1 < d.nz) {
      const std::size_t base = slice * static_cast<std::size_t>(z);
      for (std::size_t i = 0; i < slice; ++i) {
        f.try_neighbor(base + i, base + i + slice, 0, 0, -1);
      }
    }
    sed_slice(f, z);
  }
  std::copy(f.d2.begin(), f.d2.end(), out);
}

std::size_t require_binary_nonempty(const ScalarVolume& mask) {
  mask.validate_shape();
  std::size_t fg = 0;
  for (double v : mask.data) {
    if (v == 1.0) {
      ++fg;
    } else if (v != 0.0) {
      throw ValidationError("edt_unsigned: mask must be binary (0/1)");
    }
  }
  if (fg == 0) {
    throw ValidationError("empty set has no distance transform");
  }
  return fg;
}

ScalarVolume squared_transform(const ScalarVolume& mask, const EdtOptions& opts) {
  require_binary_nonempty(mask);
  const Weights w = weights_for(mask.spacing, opts.use_spacing);
  ScalarVolume out = make_scalar_volume(mask.dims, mask.spacing);
  if (opts.algorithm == EdtAlgorithm::SeparableExact) {
    separable_squared(mask, w, out.data.data());
  } else {
    vector_propagation_squared(mask, w, out.data.data());
  }
  return out;
}

double volume_diagonal(const Dims& d, const Weights& w) {
  const double ex = d.nx * w.wx;
  const double ey = d.ny * w.wy;
  const double ez = d.nz * w.wz;
  return std::sqrt(ex * ex + ey * ey + ez * ez);
}

}  // namespace

ScalarVolume edt_unsigned_squared(const ScalarVolume& mask, const EdtOptions& opts) {
  return squared_transform(mask, opts);
}

ScalarVolume edt_unsigned(const ScalarVolume& mask, const EdtOptions& opts) {
  ScalarVolume out = squared_transform(mask, opts);
  for (double& v : out.data) {
    v = std::sqrt(v);
  }
  return out;
}

SdmResult sdm_from_labels(const LabelVolume& labels, int class_id,
                          const EdtOptions& opts) {
  labels.validate();
  if (class_id < 1 || class_id > labels.num_classes) {
    throw ValidationError("sdm_from_labels: class_id outside [1, num_classes]");
  }
  const ScalarVolume inside = one_hot(labels, class_id);
  const std::size_t n = inside.data.size();
  std::size_t fg = 0;
  for (double v : inside.data) {
    fg += v != 0.0 ? 1 : 0;
  }

  const Weights w = weights_for(labels.spacing, opts.use_spacing);
  SdmResult res;
  if (fg == 0) {
    res.sdm = make_scalar_volume(labels.dims, labels.spacing,
                                 volume_diagonal(labels.dims, w));
    res.warning = SdmWarning::ClassAbsent;
    return res;
  }
  if (fg == n) {
    res.sdm = make_scalar_volume(labels.dims, labels.spacing,
                                 -volume_diagonal(labels.dims, w));
    res.warning = SdmWarning::ClassFillsVolume;
    return res;
  }

  ScalarVolume outside = inside;
  for (double& v : outside.data) {
    v = 1.0 - v;
  }
  const ScalarVolume dist_to_inside = edt_unsigned(inside, opts);
  const ScalarVolume dist_to_outside = edt_unsigned(outside, opts);
  res.sdm = make_scalar_volume(labels.dims, labels.spacing);
  for (std::size_t i = 0; i < n; ++i) {
    res.sdm.data[i] = inside.data[i] != 0.0 ? -dist_to_outside.data[i]
                                            : dist_to_inside.data[i];
  }
  return res;
}

NormalizedSdm normalize_sdm(const ScalarVolume& sdm) {
  sdm.validate_shape();
  sdm.require_finite("normalize_sdm");
  double max_pos = 0.0;
  double min_neg = 0.0;
  for (double v : sdm.data) {
    max_pos = std::max(max_pos, v);
    min_neg = std::min(min_neg, v);
  }
  NormalizedSdm out;
  out.constants.max_positive = max_pos > 0.0 ? max_pos : 1.0;
  out.constants.min_negative_abs = min_neg < 0.0 ? -min_neg : 1.0;
  out.sdm = sdm;
  for (double& v : out.sdm.data) {
    v = v > 0.0 ? v / out.constants.max_positive : v / out.constants.min_negative_abs;
  }
  return out;
}

ScalarVolume denormalize_sdm(const ScalarVolume& sdm, const NormConstants& c) {
  sdm.validate_shape();
  ScalarVolume out = sdm;
  for (double& v : out.data) {
    v = v > 0.0 ? v * c.max_positive : v * c.min_negative_abs;
  }
  return out;
}

SdmVolume sdm_volume_from_labels(const LabelVolume& labels, const EdtOptions& opts,
                                 bool normalized) {
  SdmVolume out;
  out.normalization =
      normalized ? SdmNormalization::UnitRange : SdmNormalization::RawPhysical;
  for (int c = 1; c <= labels.num_classes; ++c) {
    SdmResult r = sdm_from_labels(labels, c, opts);
    if (normalized) {
      NormalizedSdm ns = normalize_sdm(r.sdm);
      out.fields.push_back(std::move(ns.sdm));
      out.constants.push_back(ns.constants);
    } else {
      out.fields.push_back(std::move(r.sdm));
    }
  }
  return out;
}

}  // namespace sdm
