#include <doctest.h>

#include <cmath>
#include <numeric>
#include <queue>

#include "sdm/edt.hpp"
#include "sdm/errors.hpp"
#include "sdm/phantom.hpp"

#include "test_util.hpp"

using namespace sdm;

namespace {

std::size_t count_fg(const LabelVolume& v) {
  return std::count(v.data.begin(), v.data.end(), std::uint8_t(1));
}

// Number of 6-connected foreground components.
int component_count(const LabelVolume& v) {
  const Dims& d = v.dims;
  std::vector<char> seen(d.voxels(), 0);
  int components = 0;
  for (std::size_t start = 0; start < d.voxels(); ++start) {
    if (!v.data[start] || seen[start]) continue;
    ++components;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      auto idx = q.front();
      q.pop();
      auto c = coords_of(idx, d);
      const int off[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                             {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
      for (const auto& o : off) {
        int x = c[0] + o[0], y = c[1] + o[1], z = c[2] + o[2];
        if (x < 0 || y < 0 || z < 0 || x >= d.nx || y >= d.ny || z >= d.nz)
          continue;
        std::size_t n = d.index(x, y, z);
        if (v.data[n] && !seen[n]) {
          seen[n] = 1;
          q.push(n);
        }
      }
    }
  }
  return components;
}

std::vector<double> slice_areas(const LabelVolume& v) {
  std::vector<double> areas(v.dims.nz, 0.0);
  const std::size_t slice = std::size_t(v.dims.nx) * v.dims.ny;
  for (int z = 0; z < v.dims.nz; ++z) {
    for (std::size_t i = 0; i < slice; ++i)
      areas[z] += v.data[slice * z + i] == 1;
  }
  return areas;
}

// Mean |a[z-1] - 2 a[z] + a[z+1]| over interior slices.
double mean_second_difference(const std::vector<double>& a) {
  double acc = 0.0;
  int n = 0;
  for (std::size_t z = 1; z + 1 < a.size(); ++z) {
    acc += std::abs(a[z - 1] - 2.0 * a[z] + a[z + 1]);
    ++n;
  }
  return n ? acc / n : 0.0;
}

PhantomSpec sphere_spec(double radius, int dim, std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = {dim, dim, dim};
  spec.center_mm = {dim / 2.0, dim / 2.0, dim / 2.0};
  spec.radius_mm = radius;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("sphere voxel count sits between the inscribed and circumscribed balls") {
  PhantomSpec spec = sphere_spec(5.0, 16, 1);
  LabelVolume labels = rasterize_phantom(spec);
  const double lo = 4.0 / 3.0 * M_PI * std::pow(5.0 - std::sqrt(3.0) / 2.0, 3);
  const double hi = 4.0 / 3.0 * M_PI * std::pow(5.0 + std::sqrt(3.0) / 2.0, 3);
  const double count = double(count_fg(labels));
  CHECK(count >= lo);
  CHECK(count <= hi);
}

TEST_CASE("rasterization uses voxel-centre membership") {
  PhantomSpec spec = sphere_spec(3.0, 12, 1);
  LabelVolume labels = rasterize_phantom(spec);
  const Dims& d = labels.dims;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        auto c = voxel_center_mm(x, y, z, spec.spacing);
        double dx = c[0] - spec.center_mm[0];
        double dy = c[1] - spec.center_mm[1];
        double dz = c[2] - spec.center_mm[2];
        bool inside = dx * dx + dy * dy + dz * dz <= 9.0;
        CHECK((labels.data[d.index(x, y, z)] == 1) == inside);
      }
}

TEST_CASE("generation is deterministic per seed") {
  PhantomSpec spec = sphere_spec(6.0, 20, 1234);
  spec.decoys.count = 2;
  spec.decoys.radius_mm = 2.0;
  spec.decoys.margin_mm = 2.0;
  Phantom a = generate_phantom(spec);
  Phantom b = generate_phantom(spec);
  CHECK(a.labels.data == b.labels.data);
  REQUIRE(a.image.data.size() == b.image.data.size());
  for (std::size_t i = 0; i < a.image.data.size(); ++i)
    CHECK(a.image.data[i] == b.image.data[i]);

  PhantomSpec other = spec;
  other.seed = 1235;
  Phantom c = generate_phantom(other);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.image.data.size(); ++i)
    differing += a.image.data[i] != c.image.data[i];
  CHECK(differing > a.image.data.size() / 2);
}

TEST_CASE("foreground is brighter than background in the generated image") {
  PhantomSpec spec = sphere_spec(6.0, 20, 77);
  Phantom p = generate_phantom(spec);
  double fg = 0.0, bg = 0.0;
  std::size_t nfg = 0, nbg = 0;
  for (std::size_t i = 0; i < p.image.data.size(); ++i) {
    if (p.labels.data[i]) {
      fg += p.image.data[i];
      ++nfg;
    } else {
      bg += p.image.data[i];
      ++nbg;
    }
  }
  CHECK(fg / nfg > 0.7);
  CHECK(bg / nbg < 0.3);
}

TEST_CASE("ellipsoid and two-lobe shapes rasterize inside their bounds") {
  PhantomSpec spec;
  spec.dims = {32, 28, 26};
  spec.shape = PhantomShape::Ellipsoid;
  spec.center_mm = {16, 14, 13};
  spec.radii_mm = {9, 7, 5};
  LabelVolume e = rasterize_phantom(spec);
  CHECK(count_fg(e) > 0);
  CHECK(component_count(e) == 1);

  spec.shape = PhantomShape::TwoLobe;
  spec.dims = {32, 32, 32};
  spec.center_mm = {14, 16, 16};
  spec.radii_mm = {7, 6, 5};
  spec.lobe2_center_mm = {20, 16, 16};
  spec.lobe2_radii_mm = {6, 5, 4};
  LabelVolume t = rasterize_phantom(spec);
  CHECK(count_fg(t) > count_fg(e) / 4);
  CHECK(component_count(t) == 1);
}

TEST_CASE("shapes that spill over the margin are rejected") {
  PhantomSpec spec = sphere_spec(8.0, 16, 1);  // reaches the boundary
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = sphere_spec(5.0, 16, 1);
  spec.radius_mm = -1.0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("zero corruption magnitude is the identity") {
  PhantomSpec spec = sphere_spec(6.0, 20, 5);
  LabelVolume labels = rasterize_phantom(spec);
  LabelVolume same = corrupt_slicewise(labels, 0, 42);
  CHECK(same.data == labels.data);
}

TEST_CASE("corruption is deterministic per seed") {
  PhantomSpec spec = sphere_spec(6.0, 20, 5);
  LabelVolume labels = rasterize_phantom(spec);
  LabelVolume a = corrupt_slicewise(labels, 2, 42);
  LabelVolume b = corrupt_slicewise(labels, 2, 42);
  CHECK(a.data == b.data);
  LabelVolume c = corrupt_slicewise(labels, 2, 43);
  CHECK(a.data != c.data);
}

TEST_CASE("corruption roughens the slice profile measurably") {
  PhantomSpec spec = sphere_spec(7.0, 24, 5);
  LabelVolume labels = rasterize_phantom(spec);
  LabelVolume rough = corrupt_slicewise(labels, 2, 911);
  double clean_jag = mean_second_difference(slice_areas(labels));
  double rough_jag = mean_second_difference(slice_areas(rough));
  // The sphere's own profile curvature is ~2*pi per slice; slice-wise
  // dilation/erosion moves whole perimeters, an order of magnitude more.
  CHECK(rough_jag > 2.0 * clean_jag);
}

TEST_CASE("corruption never empties a previously occupied slice") {
  PhantomSpec spec = sphere_spec(5.0, 16, 5);
  LabelVolume labels = rasterize_phantom(spec);
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    LabelVolume rough = corrupt_slicewise(labels, 3, seed);
    auto before = slice_areas(labels);
    auto after = slice_areas(rough);
    for (std::size_t z = 0; z < before.size(); ++z) {
      if (before[z] > 0) CHECK(after[z] > 0);
    }
  }
}

TEST_CASE("corruption rejects multi-class volumes") {
  LabelVolume labels;
  labels.dims = {4, 4, 4};
  labels.spacing = {1, 1, 1};
  labels.num_classes = 2;
  labels.data.assign(64, 0);
  labels.data[0] = 2;
  CHECK_THROWS_AS((void)corrupt_slicewise(labels, 1, 7), ValidationError);
}

TEST_CASE("zero decoys leaves the image untouched") {
  PhantomSpec spec = sphere_spec(6.0, 24, 9);
  Phantom p = generate_phantom(spec);
  ScalarVolume same = inject_decoys(p.image, spec);
  CHECK(same.data == p.image.data);
}

TEST_CASE("decoys appear away from the organ with foreground-like intensity") {
  PhantomSpec spec = sphere_spec(6.0, 32, 9);
  spec.decoys.count = 3;
  spec.decoys.radius_mm = 2.5;
  spec.decoys.margin_mm = 6.0;
  PhantomSpec clean_spec = spec;
  clean_spec.decoys.count = 0;
  Phantom with = generate_phantom(spec);
  Phantom clean = generate_phantom(clean_spec);
  CHECK(with.labels.data == clean.labels.data);

  ScalarVolume organ_mask = one_hot(with.labels, 1);
  ScalarVolume dist = edt_unsigned(organ_mask);

  double changed_sum = 0.0;
  std::size_t strong = 0;
  const double swing = spec.fg_mean - spec.bg_mean;
  for (std::size_t i = 0; i < with.image.data.size(); ++i) {
    const double delta = with.image.data[i] - clean.image.data[i];
    if (delta == 0.0) continue;
    // Anything the injector touched must keep the requested clearance,
    // up to voxel-centre snapping of the sampled blob centre.
    CHECK(dist.data[i] >= spec.decoys.margin_mm - 1.0);
    if (delta > 0.9 * swing) {
      changed_sum += with.image.data[i];
      ++strong;
    }
  }
  REQUIRE(strong >= 10);
  const double core_mean = changed_sum / double(strong);
  CHECK(std::abs(core_mean - spec.fg_mean) <= 2.0 * spec.fg_std);
}

TEST_CASE("impossible decoy demands fail loudly") {
  PhantomSpec spec = sphere_spec(5.0, 16, 3);
  spec.decoys.count = 4;
  spec.decoys.radius_mm = 3.0;
  spec.decoys.margin_mm = 40.0;  // no voxel is this far from the organ
  Phantom p = generate_phantom(sphere_spec(5.0, 16, 3));
  CHECK_THROWS_AS((void)inject_decoys(p.image, spec), ValidationError);
}

TEST_CASE("generated labels satisfy the signed-map round trip") {
  PhantomSpec spec;
  spec.dims = {28, 28, 28};
  spec.shape = PhantomShape::TwoLobe;
  spec.center_mm = {12, 14, 14};
  spec.radii_mm = {6, 5, 5};
  spec.lobe2_center_mm = {17, 14, 14};
  spec.lobe2_radii_mm = {5, 4, 4};
  spec.seed = 31;
  LabelVolume labels = rasterize_phantom(spec);
  SdmResult r = sdm_from_labels(labels, 1);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    CHECK((r.sdm.data[i] < 0.0) == (labels.data[i] == 1));
  }
}

TEST_CASE("spec json round trips through text") {
  PhantomSpec spec;
  spec.dims = {20, 22, 24};
  spec.spacing = {1.0, 1.25, 0.75};
  spec.shape = PhantomShape::Ellipsoid;
  spec.center_mm = {10, 13, 9};
  spec.radii_mm = {5, 6, 4};
  spec.fg_mean = 0.9;
  spec.fg_std = 0.04;
  spec.bg_mean = 0.1;
  spec.bg_std = 0.06;
  spec.blur_radius_mm = 0.8;
  spec.seed = 991;
  spec.decoys.count = 2;
  spec.decoys.radius_mm = 1.5;
  spec.decoys.margin_mm = 4.0;

  PhantomSpec back = phantom_spec_from_json_text(phantom_spec_to_json_text(spec));
  CHECK(back.dims.nx == spec.dims.nx);
  CHECK(back.spacing.dy == spec.spacing.dy);
  CHECK(back.shape == PhantomShape::Ellipsoid);
  CHECK(back.radii_mm == spec.radii_mm);
  CHECK(back.fg_std == spec.fg_std);
  CHECK(back.seed == spec.seed);
  CHECK(back.decoys.count == 2);
  CHECK(back.decoys.margin_mm == 4.0);
}

TEST_CASE("spec json errors name the missing field") {
  try {
    (void)phantom_spec_from_json_text(R"({"dims":[16,16,16]})");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("spacing_mm") != std::string::npos);
  }
  CHECK_THROWS_AS((void)phantom_spec_from_json_text("not json"), IoError);
}
