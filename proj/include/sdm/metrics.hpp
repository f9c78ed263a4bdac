#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdm/volume.hpp"

namespace sdm {

struct SurfacePoint {
  double x = 0.0, y = 0.0, z = 0.0;  // mm, voxel-centre position
};

using SurfaceVoxelSet = std::vector<SurfacePoint>;

// Boundary voxels of a binary mask: foreground with at least one background
// 6-neighbour. Voxels on the volume border always qualify.
SurfaceVoxelSet extract_surface(const std::vector<std::uint8_t>& mask,
                                const Dims& dims, const Spacing& spacing);

double dice_coefficient(const std::vector<std::uint8_t>& a,
                        const std::vector<std::uint8_t>& b);

// Directed min-distance sets between two non-empty surfaces, in mm.
std::pair<std::vector<double>, std::vector<double>> surface_distances(
    const SurfaceVoxelSet& a_surf, const SurfaceVoxelSet& b_surf);

double hausdorff(const std::vector<double>& a_to_b,
                 const std::vector<double>& b_to_a);
// Max of the two directed 95th percentiles, nearest-rank method.
double hd95(const std::vector<double>& a_to_b, const std::vector<double>& b_to_a);
double asd(const std::vector<double>& a_to_b, const std::vector<double>& b_to_a);

// Nearest-rank percentile: the ceil(q*n)-th smallest value, q in (0,1].
double nearest_rank_percentile(std::vector<double> values, double q);

struct ClassMetrics {
  int class_id = 0;
  double dice = 0.0;
  double hd_mm = 0.0;
  double hd95_mm = 0.0;
  double asd_mm = 0.0;
  bool defined = false;  // false when either mask has no surface
};

struct MetricReport {
  std::vector<ClassMetrics> per_class;
  // Means over defined classes only; 0 classes defined leaves them at 0 with
  // defined_classes == 0.
  int defined_classes = 0;
  double mean_dice = 0.0;
  double mean_hd_mm = 0.0;
  double mean_hd95_mm = 0.0;
  double mean_asd_mm = 0.0;
};

MetricReport evaluate_labels(const LabelVolume& pred, const LabelVolume& gt);

// CSV columns: class_id, dice, hd_mm, hd95_mm, asd_mm, defined(0|1).
// Undefined rows carry nan in the distance columns.
void write_metrics_csv(const MetricReport& report, const std::string& path);
std::string metrics_csv_string(const MetricReport& report);

}  // namespace sdm
