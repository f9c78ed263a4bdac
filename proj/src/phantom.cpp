#include "sdm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sdm/edt.hpp"
#include "sdm/rng.hpp"

namespace sdm {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Box {
  std::array<double, 3> lo, hi;
};

Box shape_bounds(const PhantomSpec& s) {
  auto around = [](const std::array<double, 3>& c, const std::array<double, 3>& r) {
    Box b;
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = c[a] - r[a];
      b.hi[a] = c[a] + r[a];
    }
    return b;
  };
  switch (s.shape) {
    case PhantomShape::Sphere:
      return around(s.center_mm, {s.radius_mm, s.radius_mm, s.radius_mm});
    case PhantomShape::Ellipsoid:
      return around(s.center_mm, s.radii_mm);
    case PhantomShape::TwoLobe: {
      Box b1 = around(s.center_mm, s.radii_mm);
      Box b2 = around(s.lobe2_center_mm, s.lobe2_radii_mm);
      for (int a = 0; a < 3; ++a) {
        b1.lo[a] = std::min(b1.lo[a], b2.lo[a]);
        b1.hi[a] = std::max(b1.hi[a], b2.hi[a]);
      }
      return b1;
    }
  }
  throw ValidationError("phantom spec: unknown shape");
}

bool inside_ellipsoid(double x, double y, double z,
                      const std::array<double, 3>& c,
                      const std::array<double, 3>& r) {
  const double u = (x - c[0]) / r[0];
  const double v = (y - c[1]) / r[1];
  const double w = (z - c[2]) / r[2];
  return u * u + v * v + w * w <= 1.0;
}

bool inside_shape(const PhantomSpec& s, double x, double y, double z) {
  switch (s.shape) {
    case PhantomShape::Sphere: {
      const double r = s.radius_mm;
      return inside_ellipsoid(x, y, z, s.center_mm, {r, r, r});
    }
    case PhantomShape::Ellipsoid:
      return inside_ellipsoid(x, y, z, s.center_mm, s.radii_mm);
    case PhantomShape::TwoLobe:
      return inside_ellipsoid(x, y, z, s.center_mm, s.radii_mm) ||
             inside_ellipsoid(x, y, z, s.lobe2_center_mm, s.lobe2_radii_mm);
  }
  return false;
}

// Separable Gaussian blur with a 3-sigma truncated kernel; taps falling
// outside the volume are dropped and the remaining weights renormalized.
void blur_axis(std::vector<double>& data, const Dims& dims, int axis,
               double sigma_vox) {
  if (sigma_vox < 1e-6) return;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma_vox)));
  std::vector<double> w(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * (i / sigma_vox) * (i / sigma_vox));
  }
  const int n[3] = {dims.nx, dims.ny, dims.nz};
  const std::size_t stride[3] = {1, std::size_t(dims.nx),
                                 std::size_t(dims.nx) * dims.ny};
  const int len = n[axis];
  const std::size_t st = stride[axis];
  const int oa = (axis + 1) % 3, ob = (axis + 2) % 3;
  std::vector<double> line(len);
  for (int b = 0; b < n[ob]; ++b) {
    for (int a = 0; a < n[oa]; ++a) {
      const std::size_t base = std::size_t(a) * stride[oa] + std::size_t(b) * stride[ob];
      for (int i = 0; i < len; ++i) line[i] = data[base + std::size_t(i) * st];
      for (int i = 0; i < len; ++i) {
        double acc = 0.0, norm = 0.0;
        const int j0 = std::max(0, i - radius), j1 = std::min(len - 1, i + radius);
        for (int j = j0; j <= j1; ++j) {
          const double wj = w[j - i + radius];
          acc += wj * line[j];
          norm += wj;
        }
        data[base + std::size_t(i) * st] = acc / norm;
      }
    }
  }
}

int clamp_index(double pos_mm, double spacing, int n) {
  const int i = int(std::floor(pos_mm / spacing));
  return std::clamp(i, 0, n - 1);
}

void parse_vec3(const json& j, const char* key, std::array<double, 3>& out) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) {
    throw IoError(std::string("phantom spec: field \"") + key +
                  "\" must be an array of 3 numbers");
  }
  out = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

void PhantomSpec::validate() const {
  dims.validate();
  spacing.validate();
  auto positive3 = [](const std::array<double, 3>& r, const char* what) {
    for (double v : r) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string("phantom spec: ") + what +
                              " must be positive and finite");
      }
    }
  };
  if (shape == PhantomShape::Sphere) {
    if (!(radius_mm > 0.0) || !std::isfinite(radius_mm)) {
      throw ValidationError("phantom spec: radius_mm must be positive and finite");
    }
  } else {
    positive3(radii_mm, "radii_mm");
    if (shape == PhantomShape::TwoLobe) positive3(lobe2_radii_mm, "lobe2_radii_mm");
  }
  if (!(fg_std >= 0.0) || !(bg_std >= 0.0) || !std::isfinite(fg_mean) ||
      !std::isfinite(bg_mean)) {
    throw ValidationError("phantom spec: intensity stats must be finite, stds >= 0");
  }
  if (!(blur_radius_mm >= 0.0) || !std::isfinite(blur_radius_mm)) {
    throw ValidationError("phantom spec: blur_radius_mm must be >= 0");
  }
  const Box b = shape_bounds(*this);
  const double sp[3] = {spacing.dx, spacing.dy, spacing.dz};
  const int n[3] = {dims.nx, dims.ny, dims.nz};
  for (int a = 0; a < 3; ++a) {
    if (b.lo[a] < 2.0 * sp[a] || b.hi[a] > (n[a] - 2) * sp[a]) {
      throw ValidationError("phantom spec: shape must fit with a 2-voxel margin");
    }
  }
  if (decoys.count < 0) {
    throw ValidationError("phantom spec: decoys.count must be >= 0");
  }
  if (decoys.count > 0) {
    if (!(decoys.radius_mm > 0.0)) {
      throw ValidationError("phantom spec: decoys.radius_mm must be positive");
    }
    if (!(decoys.margin_mm >= 0.0)) {
      throw ValidationError("phantom spec: decoys.margin_mm must be >= 0");
    }
  }
}

LabelVolume rasterize_phantom(const PhantomSpec& spec) {
  spec.validate();
  LabelVolume labels;
  labels.dims = spec.dims;
  labels.spacing = spec.spacing;
  labels.num_classes = 1;
  labels.data.assign(spec.dims.voxels(), 0);
  for (int z = 0; z < spec.dims.nz; ++z) {
    const double zm = voxel_center_mm(z, spec.spacing.dz);
    for (int y = 0; y < spec.dims.ny; ++y) {
      const double ym = voxel_center_mm(y, spec.spacing.dy);
      for (int x = 0; x < spec.dims.nx; ++x) {
        const double xm = voxel_center_mm(x, spec.spacing.dx);
        if (inside_shape(spec, xm, ym, zm)) {
          labels.data[spec.dims.index(x, y, z)] = 1;
        }
      }
    }
  }
  return labels;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Phantom out;
  out.labels = rasterize_phantom(spec);
  out.image = make_scalar_volume(spec.dims, spec.spacing, spec.bg_mean);
  const std::size_t n = spec.dims.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    if (out.labels.data[i]) out.image.data[i] = spec.fg_mean;
  }
  blur_axis(out.image.data, spec.dims, 0, spec.blur_radius_mm / spec.spacing.dx);
  blur_axis(out.image.data, spec.dims, 1, spec.blur_radius_mm / spec.spacing.dy);
  blur_axis(out.image.data, spec.dims, 2, spec.blur_radius_mm / spec.spacing.dz);
  Rng noise(Rng::derive(spec.seed, 0));
  for (std::size_t i = 0; i < n; ++i) {
    const double sd = out.labels.data[i] ? spec.fg_std : spec.bg_std;
    out.image.data[i] += sd * noise.normal();
  }
  if (spec.decoys.count > 0) {
    out.image = inject_decoys(out.image, spec);
  }
  return out;
}

LabelVolume corrupt_slicewise(const LabelVolume& labels, int magnitude,
                              std::uint64_t seed) {
  labels.validate();
  if (labels.num_classes != 1) {
    throw ValidationError("slice corruption supports single-class labels only");
  }
  if (magnitude < 0) {
    throw ValidationError("slice corruption magnitude must be >= 0");
  }
  LabelVolume out = labels;
  if (magnitude == 0) return out;
  const int nx = labels.dims.nx, ny = labels.dims.ny;
  const std::size_t slice_n = std::size_t(nx) * ny;
  std::vector<std::uint8_t> cur(slice_n), next(slice_n);
  auto at = [&](const std::vector<std::uint8_t>& s, int x, int y) -> std::uint8_t {
    if (x < 0 || y < 0 || x >= nx || y >= ny) return 0;
    return s[std::size_t(y) * nx + x];
  };
  for (int z = 0; z < labels.dims.nz; ++z) {
    const std::size_t base = slice_n * std::size_t(z);
    std::copy_n(out.data.begin() + base, slice_n, cur.begin());
    if (std::find(cur.begin(), cur.end(), 1) == cur.end()) continue;
    Rng rng(Rng::derive(seed, std::uint64_t(z)));
    const bool dilate = rng.uniform_int(0, 1) == 1;
    const int steps = int(rng.uniform_int(0, magnitude));
    for (int s = 0; s < steps; ++s) {
      std::size_t count = 0;
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          const bool any4 = at(cur, x - 1, y) || at(cur, x + 1, y) ||
                            at(cur, x, y - 1) || at(cur, x, y + 1);
          const bool self = at(cur, x, y);
          const bool v = dilate ? (self || any4)
                                : (self && at(cur, x - 1, y) && at(cur, x + 1, y) &&
                                   at(cur, x, y - 1) && at(cur, x, y + 1));
          next[std::size_t(y) * nx + x] = v;
          count += v;
        }
      }
      if (!dilate && count == 0) break;  // keep non-empty slices non-empty
      std::swap(cur, next);
    }
    std::copy_n(cur.begin(), slice_n, out.data.begin() + base);
  }
  return out;
}

ScalarVolume inject_decoys(const ScalarVolume& image, const PhantomSpec& spec) {
  spec.validate();
  image.validate_shape();
  if (!same_grid(image.dims, image.spacing, spec.dims, spec.spacing)) {
    throw ValidationError("decoy injection: image grid does not match spec");
  }
  ScalarVolume out = image;
  if (spec.decoys.count == 0) return out;

  const LabelVolume organ = rasterize_phantom(spec);
  ScalarVolume organ_mask = make_scalar_volume(spec.dims, spec.spacing, 0.0);
  for (std::size_t i = 0; i < organ.data.size(); ++i) {
    organ_mask.data[i] = organ.data[i] ? 1.0 : 0.0;
  }
  const ScalarVolume clearance = edt_unsigned(organ_mask);

  const double r = spec.decoys.radius_mm;
  const double need = spec.decoys.margin_mm + r;
  const double lim[3] = {spec.dims.nx * spec.spacing.dx,
                         spec.dims.ny * spec.spacing.dy,
                         spec.dims.nz * spec.spacing.dz};
  Rng rng(Rng::derive(spec.seed, 1));
  std::vector<std::array<double, 3>> centers;
  const int max_attempts = 20000 * spec.decoys.count;
  for (int attempt = 0; attempt < max_attempts &&
                        int(centers.size()) < spec.decoys.count;
       ++attempt) {
    std::array<double, 3> c;
    bool in_bounds = true;
    for (int a = 0; a < 3; ++a) {
      if (lim[a] < 2.0 * r) {
        in_bounds = false;
        break;
      }
      c[a] = rng.uniform(r, lim[a] - r);
    }
    if (!in_bounds) break;
    const int ix = clamp_index(c[0], spec.spacing.dx, spec.dims.nx);
    const int iy = clamp_index(c[1], spec.spacing.dy, spec.dims.ny);
    const int iz = clamp_index(c[2], spec.spacing.dz, spec.dims.nz);
    if (clearance.data[spec.dims.index(ix, iy, iz)] < need) continue;
    bool clear_of_others = true;
    for (const auto& p : centers) {
      const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
      if (dx * dx + dy * dy + dz * dz < (3.0 * r) * (3.0 * r)) {
        clear_of_others = false;
        break;
      }
    }
    if (clear_of_others) centers.push_back(c);
  }
  if (int(centers.size()) < spec.decoys.count) {
    throw ValidationError("decoy injection: volume too crowded for requested decoys");
  }

  // Radial profile: flat core, cosine rolloff over the outer 35% of the
  // radius. Blob voxels blend toward fresh foreground-statistics samples.
  const double s = 0.35 * r;
  for (const auto& c : centers) {
    const int x0 = std::max(0, clamp_index(c[0] - r, spec.spacing.dx, spec.dims.nx));
    const int x1 = clamp_index(c[0] + r, spec.spacing.dx, spec.dims.nx);
    const int y0 = std::max(0, clamp_index(c[1] - r, spec.spacing.dy, spec.dims.ny));
    const int y1 = clamp_index(c[1] + r, spec.spacing.dy, spec.dims.ny);
    const int z0 = std::max(0, clamp_index(c[2] - r, spec.spacing.dz, spec.dims.nz));
    const int z1 = clamp_index(c[2] + r, spec.spacing.dz, spec.dims.nz);
    for (int z = z0; z <= z1; ++z) {
      const double zm = voxel_center_mm(z, spec.spacing.dz) - c[2];
      for (int y = y0; y <= y1; ++y) {
        const double ym = voxel_center_mm(y, spec.spacing.dy) - c[1];
        for (int x = x0; x <= x1; ++x) {
          const double xm = voxel_center_mm(x, spec.spacing.dx) - c[0];
          const double d = std::sqrt(xm * xm + ym * ym + zm * zm);
          if (d > r) continue;
          double w = 1.0;
          if (d > r - s) w = 0.5 * (1.0 + std::cos(kPi * (d - (r - s)) / s));
          const double sample = spec.fg_mean + spec.fg_std * rng.normal();
          double& v = out.data[spec.dims.index(x, y, z)];
          v = (1.0 - w) * v + w * sample;
        }
      }
    }
  }
  return out;
}

PhantomSpec phantom_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("phantom spec: invalid JSON (") + e.what() + ")");
  }
  PhantomSpec s;
  try {
    const auto& dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
      throw IoError("phantom spec: field \"dims\" must be an array of 3 integers");
    }
    s.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    std::array<double, 3> sp{};
    parse_vec3(j, "spacing_mm", sp);
    s.spacing = {sp[0], sp[1], sp[2]};
    const std::string shape = j.at("shape").get<std::string>();
    if (shape == "sphere") {
      s.shape = PhantomShape::Sphere;
    } else if (shape == "ellipsoid") {
      s.shape = PhantomShape::Ellipsoid;
    } else if (shape == "two-lobe") {
      s.shape = PhantomShape::TwoLobe;
    } else {
      throw IoError("phantom spec: field \"shape\" has unknown value \"" + shape + "\"");
    }
    parse_vec3(j, "center_mm", s.center_mm);
    if (s.shape == PhantomShape::Sphere) {
      s.radius_mm = j.at("radius_mm").get<double>();
    } else {
      parse_vec3(j, "radii_mm", s.radii_mm);
      if (s.shape == PhantomShape::TwoLobe) {
        parse_vec3(j, "lobe2_center_mm", s.lobe2_center_mm);
        parse_vec3(j, "lobe2_radii_mm", s.lobe2_radii_mm);
      }
    }
    s.fg_mean = j.at("fg_mean").get<double>();
    s.fg_std = j.at("fg_std").get<double>();
    s.bg_mean = j.at("bg_mean").get<double>();
    s.bg_std = j.at("bg_std").get<double>();
    s.blur_radius_mm = j.at("blur_radius_mm").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("decoys")) {
      const auto& d = j.at("decoys");
      s.decoys.count = d.at("count").get<int>();
      if (d.contains("radius_mm")) s.decoys.radius_mm = d.at("radius_mm").get<double>();
      if (d.contains("margin_mm")) s.decoys.margin_mm = d.at("margin_mm").get<double>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("phantom spec: malformed field (") + e.what() + ")");
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw IoError(e.what());
  }
  return s;
}

PhantomSpec read_phantom_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return phantom_spec_from_json_text(ss.str());
}

std::string phantom_spec_to_json_text(const PhantomSpec& spec) {
  json j;
  j["dims"] = {spec.dims.nx, spec.dims.ny, spec.dims.nz};
  j["spacing_mm"] = {spec.spacing.dx, spec.spacing.dy, spec.spacing.dz};
  switch (spec.shape) {
    case PhantomShape::Sphere:
      j["shape"] = "sphere";
      j["radius_mm"] = spec.radius_mm;
      break;
    case PhantomShape::Ellipsoid:
      j["shape"] = "ellipsoid";
      j["radii_mm"] = spec.radii_mm;
      break;
    case PhantomShape::TwoLobe:
      j["shape"] = "two-lobe";
      j["radii_mm"] = spec.radii_mm;
      j["lobe2_center_mm"] = spec.lobe2_center_mm;
      j["lobe2_radii_mm"] = spec.lobe2_radii_mm;
      break;
  }
  j["center_mm"] = spec.center_mm;
  j["fg_mean"] = spec.fg_mean;
  j["fg_std"] = spec.fg_std;
  j["bg_mean"] = spec.bg_mean;
  j["bg_std"] = spec.bg_std;
  j["blur_radius_mm"] = spec.blur_radius_mm;
  j["seed"] = spec.seed;
  if (spec.decoys.count > 0) {
    j["decoys"] = {{"count", spec.decoys.count},
                   {"radius_mm", spec.decoys.radius_mm},
                   {"margin_mm", spec.decoys.margin_mm}};
  }
  return j.dump(2) + "\n";
}

}  // namespace sdm
