#include "sdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sdm/volume_io.hpp"

namespace sdm {

SurfaceVoxelSet extract_surface(const std::vector<std::uint8_t>& mask,
                                const Dims& dims, const Spacing& spacing) {
  dims.validate();
  spacing.validate();
  if (mask.size() != dims.voxels()) {
    throw ValidationError("surface extraction: mask size does not match dims");
  }
  SurfaceVoxelSet out;
  const int nx = dims.nx, ny = dims.ny, nz = dims.nz;
  auto bg = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return true;
    return mask[dims.index(x, y, z)] == 0;
  };
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        if (mask[dims.index(x, y, z)] == 0) continue;
        if (bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) ||
            bg(x, y + 1, z) || bg(x, y, z - 1) || bg(x, y, z + 1)) {
          out.push_back({voxel_center_mm(x, spacing.dx),
                         voxel_center_mm(y, spacing.dy),
                         voxel_center_mm(z, spacing.dz)});
        }
      }
    }
  }
  return out;
}

double dice_coefficient(const std::vector<std::uint8_t>& a,
                        const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) {
    throw ValidationError("dice: mask sizes differ");
  }
  std::size_t ca = 0, cb = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a[i] != 0, fb = b[i] != 0;
    ca += fa;
    cb += fb;
    inter += fa && fb;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * double(inter) / double(ca + cb);
}

std::pair<std::vector<double>, std::vector<double>> surface_distances(
    const SurfaceVoxelSet& a_surf, const SurfaceVoxelSet& b_surf) {
  if (a_surf.empty() || b_surf.empty()) {
    throw ValidationError("surface distances need two non-empty surfaces");
  }
  auto directed = [](const SurfaceVoxelSet& from, const SurfaceVoxelSet& to) {
    std::vector<double> d(from.size());
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const SurfacePoint& q : to) {
        const double dx = from[i].x - q.x;
        const double dy = from[i].y - q.y;
        const double dz = from[i].z - q.z;
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < best) best = d2;
      }
      d[i] = std::sqrt(best);
    }
    return d;
  };
  return {directed(a_surf, b_surf), directed(b_surf, a_surf)};
}

double hausdorff(const std::vector<double>& a_to_b,
                 const std::vector<double>& b_to_a) {
  double m = 0.0;
  for (double d : a_to_b) m = std::max(m, d);
  for (double d : b_to_a) m = std::max(m, d);
  return m;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) {
    throw ValidationError("percentile of empty set");
  }
  if (!(q > 0.0 && q <= 1.0)) {
    throw ValidationError("percentile rank must lie in (0, 1]");
  }
  std::sort(values.begin(), values.end());
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(q * double(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

double hd95(const std::vector<double>& a_to_b, const std::vector<double>& b_to_a) {
  return std::max(nearest_rank_percentile(a_to_b, 0.95),
                  nearest_rank_percentile(b_to_a, 0.95));
}

double asd(const std::vector<double>& a_to_b, const std::vector<double>& b_to_a) {
  if (a_to_b.empty() && b_to_a.empty()) {
    throw ValidationError("average surface distance of empty sets");
  }
  // Per-direction partial sums keep the result identical when the
  // argument order is swapped.
  double sa = 0.0, sb = 0.0;
  for (double d : a_to_b) sa += d;
  for (double d : b_to_a) sb += d;
  return (sa + sb) / double(a_to_b.size() + b_to_a.size());
}

MetricReport evaluate_labels(const LabelVolume& pred, const LabelVolume& gt) {
  pred.validate();
  gt.validate();
  if (!same_grid(pred.dims, pred.spacing, gt.dims, gt.spacing)) {
    throw ValidationError("metric inputs disagree on grid");
  }
  if (pred.num_classes != gt.num_classes) {
    throw ValidationError("metric inputs disagree on class count");
  }
  MetricReport report;
  const std::size_t n = pred.dims.voxels();
  std::vector<std::uint8_t> mp(n), mg(n);
  for (int c = 1; c <= pred.num_classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      mp[i] = pred.data[i] == c;
      mg[i] = gt.data[i] == c;
    }
    ClassMetrics m;
    m.class_id = c;
    m.dice = dice_coefficient(mp, mg);
    const SurfaceVoxelSet sp = extract_surface(mp, pred.dims, pred.spacing);
    const SurfaceVoxelSet sg = extract_surface(mg, gt.dims, gt.spacing);
    if (!sp.empty() && !sg.empty()) {
      const auto [dpg, dgp] = surface_distances(sp, sg);
      m.hd_mm = hausdorff(dpg, dgp);
      m.hd95_mm = hd95(dpg, dgp);
      m.asd_mm = asd(dpg, dgp);
      m.defined = true;
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      m.hd_mm = m.hd95_mm = m.asd_mm = nan;
    }
    report.per_class.push_back(m);
  }
  for (const ClassMetrics& m : report.per_class) {
    if (!m.defined) continue;
    ++report.defined_classes;
    report.mean_dice += m.dice;
    report.mean_hd_mm += m.hd_mm;
    report.mean_hd95_mm += m.hd95_mm;
    report.mean_asd_mm += m.asd_mm;
  }
  if (report.defined_classes > 0) {
    report.mean_dice /= report.defined_classes;
    report.mean_hd_mm /= report.defined_classes;
    report.mean_hd95_mm /= report.defined_classes;
    report.mean_asd_mm /= report.defined_classes;
  }
  return report;
}

std::string metrics_csv_string(const MetricReport& report) {
  std::string out =
      "# hd95 = max of directed 95th percentiles, nearest-rank method\n"
      "class_id,dice,hd_mm,hd95_mm,asd_mm,defined\n";
  char buf[256];
  for (const ClassMetrics& m : report.per_class) {
    if (m.defined) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,1\n",
                    m.class_id, m.dice, m.hd_mm, m.hd95_mm, m.asd_mm);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,nan,nan,nan,0\n", m.class_id,
                    m.dice);
    }
    out += buf;
  }
  return out;
}

void write_metrics_csv(const MetricReport& report, const std::string& path) {
  write_file_atomic(path, metrics_csv_string(report));
}

}  // namespace sdm
