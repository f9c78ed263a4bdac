#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sdm/errors.hpp"
#include "sdm/metrics.hpp"
#include "sdm/rng.hpp"

#include "test_util.hpp"

using namespace sdm;

namespace {

std::vector<std::uint8_t> solid_cube(const Dims& d, int x0, int y0, int z0,
                                     int side) {
  std::vector<std::uint8_t> m(d.voxels(), 0);
  for (int z = z0; z < z0 + side; ++z)
    for (int y = y0; y < y0 + side; ++y)
      for (int x = x0; x < x0 + side; ++x) m[d.index(x, y, z)] = 1;
  return m;
}

double brute_min_dist(const SurfacePoint& p, const SurfaceVoxelSet& s) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : s) {
    double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
    best = std::min(best, dx * dx + dy * dy + dz * dz);
  }
  return std::sqrt(best);
}

}  // namespace

TEST_CASE("dice of identical, disjoint and half-overlapping masks") {
  Dims d{4, 4, 4};
  auto a = solid_cube(d, 0, 0, 0, 2);
  auto b = solid_cube(d, 2, 2, 2, 2);
  CHECK(dice_coefficient(a, a) == 1.0);
  CHECK(dice_coefficient(a, b) == 0.0);
  // Two 8-voxel cubes sharing a 1x2x2 slab of 4 voxels.
  auto c = solid_cube(d, 1, 0, 0, 2);
  CHECK(dice_coefficient(a, c) == 0.5);
}

TEST_CASE("dice of two empty masks is one by convention") {
  std::vector<std::uint8_t> empty(8, 0);
  CHECK(dice_coefficient(empty, empty) == 1.0);
}

TEST_CASE("surface of a solid cube is everything but the core") {
  Dims d{5, 5, 5};
  auto m = solid_cube(d, 1, 1, 1, 3);
  SurfaceVoxelSet s = extract_surface(m, d, {1, 1, 1});
  CHECK(s.size() == 26);
  // The core voxel (2,2,2) sits at physical (2.5, 2.5, 2.5).
  for (const auto& p : s) {
    CHECK(!(p.x == 2.5 && p.y == 2.5 && p.z == 2.5));
  }
}

TEST_CASE("a single voxel is its own surface") {
  Dims d{3, 3, 3};
  std::vector<std::uint8_t> m(27, 0);
  m[d.index(1, 1, 1)] = 1;
  SurfaceVoxelSet s = extract_surface(m, d, {2, 2, 2});
  REQUIRE(s.size() == 1);
  CHECK(s[0].x == 3.0);
  CHECK(s[0].y == 3.0);
  CHECK(s[0].z == 3.0);
}

TEST_CASE("the volume border counts as background") {
  Dims d{2, 2, 2};
  std::vector<std::uint8_t> m(8, 1);
  SurfaceVoxelSet s = extract_surface(m, d, {1, 1, 1});
  CHECK(s.size() == 8);
}

TEST_CASE("interior voxels of a filled block are not surface") {
  Dims d{6, 6, 6};
  auto m = solid_cube(d, 0, 0, 0, 6);
  SurfaceVoxelSet s = extract_surface(m, d, {1, 1, 1});
  CHECK(s.size() == 216 - 64);
}

TEST_CASE("directed distances between two voxels use physical units") {
  Dims d{5, 1, 1};
  std::vector<std::uint8_t> a(5, 0), b(5, 0);
  a[0] = 1;
  b[3] = 1;
  auto sa = extract_surface(a, d, {1, 1, 1});
  auto sb = extract_surface(b, d, {1, 1, 1});
  auto [ab, ba] = surface_distances(sa, sb);
  REQUIRE(ab.size() == 1);
  REQUIRE(ba.size() == 1);
  CHECK(ab[0] == 3.0);
  CHECK(ba[0] == 3.0);
  CHECK(hausdorff(ab, ba) == 3.0);
  CHECK(hd95(ab, ba) == 3.0);
  CHECK(asd(ab, ba) == 3.0);
}

TEST_CASE("a contained surface has zero forward distances") {
  Dims d{6, 6, 6};
  auto big = solid_cube(d, 1, 1, 1, 4);
  auto sb = extract_surface(big, d, {1, 1, 1});
  SurfaceVoxelSet part(sb.begin(), sb.begin() + 5);
  auto [ab, ba] = surface_distances(part, sb);
  for (double v : ab) CHECK(v == 0.0);
}

TEST_CASE("identical masks score zero on every distance metric") {
  Dims d{6, 6, 6};
  auto m = solid_cube(d, 1, 2, 1, 3);
  auto s = extract_surface(m, d, {1, 1, 1});
  auto [ab, ba] = surface_distances(s, s);
  CHECK(hausdorff(ab, ba) == 0.0);
  CHECK(hd95(ab, ba) == 0.0);
  CHECK(asd(ab, ba) == 0.0);
}

TEST_CASE("directed distances match the all-pairs oracle exactly") {
  Rng rng(601);
  Dims d{7, 6, 5};
  for (int trial = 0; trial < 6; ++trial) {
    Spacing sp{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    std::vector<std::uint8_t> a(d.voxels()), b(d.voxels());
    for (auto& v : a) v = rng.uniform() < 0.25;
    for (auto& v : b) v = rng.uniform() < 0.25;
    a[0] = b[0] = 1;
    auto sa = extract_surface(a, d, sp);
    auto sb = extract_surface(b, d, sp);
    auto [ab, ba] = surface_distances(sa, sb);
    REQUIRE(ab.size() == sa.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
      CHECK(ab[i] == brute_min_dist(sa[i], sb));
    }
    for (std::size_t i = 0; i < sb.size(); ++i) {
      CHECK(ba[i] == brute_min_dist(sb[i], sa));
    }
  }
}

TEST_CASE("nearest-rank percentile picks the ceil(q n)-th smallest") {
  std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(nearest_rank_percentile(v, 0.5) == 3.0);   // rank ceil(2.5) = 3
  CHECK(nearest_rank_percentile(v, 0.95) == 5.0);  // rank ceil(4.75) = 5
  CHECK(nearest_rank_percentile(v, 0.2) == 1.0);   // rank ceil(1.0) = 1
  CHECK(nearest_rank_percentile(v, 1.0) == 5.0);
  CHECK_THROWS_AS((void)nearest_rank_percentile({}, 0.5), ValidationError);
  CHECK_THROWS_AS((void)nearest_rank_percentile(v, 0.0), ValidationError);
  CHECK_THROWS_AS((void)nearest_rank_percentile(v, 1.5), ValidationError);
}

TEST_CASE("a lone outlier in twenty values is trimmed by the 95th percentile") {
  // 19 values at 1 mm plus one at 10 mm: rank ceil(0.95*20) = 19 -> 1 mm.
  std::vector<double> one_outlier(19, 1.0);
  one_outlier.push_back(10.0);
  CHECK(nearest_rank_percentile(one_outlier, 0.95) == 1.0);
  CHECK(*std::max_element(one_outlier.begin(), one_outlier.end()) == 10.0);

  // With two outliers the 19th smallest is already 10 mm.
  std::vector<double> two_outliers(18, 1.0);
  two_outliers.push_back(10.0);
  two_outliers.push_back(10.0);
  CHECK(nearest_rank_percentile(two_outliers, 0.95) == 10.0);

  // hd95 takes the worse direction.
  std::vector<double> clean(20, 1.0);
  CHECK(hausdorff(one_outlier, clean) == 10.0);
  CHECK(hd95(one_outlier, clean) == 1.0);
  CHECK(hd95(two_outliers, clean) == 10.0);
}

TEST_CASE("random masks keep the metric ordering and symmetry") {
  Rng rng(602);
  Dims d{8, 8, 8};
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<std::uint8_t> a(d.voxels()), b(d.voxels());
    for (auto& v : a) v = rng.uniform() < 0.3;
    for (auto& v : b) v = rng.uniform() < 0.3;
    a[100] = b[200] = 1;
    auto sa = extract_surface(a, d, {1, 1, 1});
    auto sb = extract_surface(b, d, {1, 1, 1});
    auto [ab, ba] = surface_distances(sa, sb);
    double hd = hausdorff(ab, ba);
    CHECK(hd95(ab, ba) <= hd);
    CHECK(asd(ab, ba) <= hd);
    CHECK(hausdorff(ba, ab) == hd);
    CHECK(hd95(ba, ab) == hd95(ab, ba));
    CHECK(asd(ba, ab) == asd(ab, ba));
  }
}

TEST_CASE("translating both masks together changes nothing") {
  Rng rng(603);
  Dims d{9, 9, 9};
  std::vector<std::uint8_t> a(d.voxels(), 0), b(d.voxels(), 0);
  std::vector<std::uint8_t> a2(d.voxels(), 0), b2(d.voxels(), 0);
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) {
        if (rng.uniform() < 0.6) a[d.index(x, y, z)] = 1;
        if (rng.uniform() < 0.6) b[d.index(x, y, z)] = 1;
      }
  a[d.index(1, 1, 1)] = b[d.index(2, 2, 2)] = 1;
  const int sx = 3, sy = 2, sz = 4;
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        a2[d.index(x + sx, y + sy, z + sz)] = a[d.index(x, y, z)];
        b2[d.index(x + sx, y + sy, z + sz)] = b[d.index(x, y, z)];
      }
  auto dist = [&](const std::vector<std::uint8_t>& u,
                  const std::vector<std::uint8_t>& v) {
    auto su = extract_surface(u, d, {1, 1, 1});
    auto sv = extract_surface(v, d, {1, 1, 1});
    return surface_distances(su, sv);
  };
  auto [ab, ba] = dist(a, b);
  auto [ab2, ba2] = dist(a2, b2);
  CHECK(hausdorff(ab, ba) == hausdorff(ab2, ba2));
  CHECK(hd95(ab, ba) == hd95(ab2, ba2));
  CHECK(asd(ab, ba) == asd(ab2, ba2));
  CHECK(dice_coefficient(a, b) == dice_coefficient(a2, b2));
}

TEST_CASE("label reports cover every class with undefined flags") {
  Dims d{6, 6, 6};
  LabelVolume pred, gt;
  pred.dims = gt.dims = d;
  pred.spacing = gt.spacing = {1, 1, 1};
  pred.num_classes = gt.num_classes = 2;
  pred.data.assign(d.voxels(), 0);
  gt.data.assign(d.voxels(), 0);
  // Class 1 present in both; class 2 only in gt.
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) {
        pred.data[d.index(x, y, z)] = 1;
        gt.data[d.index(x, y, z)] = 1;
      }
  gt.data[d.index(5, 5, 5)] = 2;

  MetricReport rep = evaluate_labels(pred, gt);
  REQUIRE(rep.per_class.size() == 2);
  CHECK(rep.per_class[0].defined);
  CHECK(rep.per_class[0].dice == 1.0);
  CHECK(rep.per_class[0].hd_mm == 0.0);
  CHECK(!rep.per_class[1].defined);
  CHECK(rep.defined_classes == 1);
  // Means skip the undefined class.
  CHECK(rep.mean_dice == 1.0);
  CHECK(rep.mean_hd_mm == 0.0);
}

TEST_CASE("reports reject mismatched grids") {
  LabelVolume a, b;
  a.dims = {2, 2, 2};
  b.dims = {2, 2, 3};
  a.spacing = b.spacing = {1, 1, 1};
  a.data.assign(8, 0);
  b.data.assign(12, 0);
  a.data[0] = b.data[0] = 1;
  CHECK_THROWS_AS((void)evaluate_labels(a, b), ValidationError);
}

TEST_CASE("csv output records the percentile convention and undefined cells") {
  Dims d{4, 4, 4};
  LabelVolume pred, gt;
  pred.dims = gt.dims = d;
  pred.spacing = gt.spacing = {1, 1, 1};
  pred.num_classes = gt.num_classes = 2;
  pred.data.assign(d.voxels(), 0);
  gt.data.assign(d.voxels(), 0);
  pred.data[0] = gt.data[0] = 1;
  gt.data[10] = 2;
  MetricReport rep = evaluate_labels(pred, gt);
  std::string csv = metrics_csv_string(rep);
  CHECK(csv.find("nearest-rank") != std::string::npos);
  CHECK(csv.find("class_id,dice,hd_mm,hd95_mm,asd_mm,defined") != std::string::npos);
  CHECK(csv.find("nan") != std::string::npos);
}
