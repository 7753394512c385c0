#pragma once

#include <optional>
#include <string>

#include "prodat/pointcloud.hpp"

namespace prodat::io {

enum class CloudFormat { ply_ascii, ply_binary_le, kitti_bin, csv_xyz };

CloudFormat format_from_name(const std::string& name);
std::string format_name(CloudFormat fmt);

// Guesses from the extension: .ply (header decides ascii/binary),
// .bin -> kitti_bin, .csv/.xyz -> csv_xyz.
CloudFormat guess_format(const std::string& path);

PointCloud load_pointcloud(const std::string& path, CloudFormat format);
void save_pointcloud(const PointCloud& pc, const std::string& path,
                     CloudFormat format);

// Scene-adaptive unit-cube normalization with uniform scale. Output
// coordinates lie in [padding, 1-padding]^3; a zero-extent axis maps to
// the cube center on that axis.
std::pair<PointCloud, NormalizeTransform> normalize_to_unit_cube(
    const PointCloud& pc, double padding = 0.05);

// Maps each coordinate to round(c * (2^bits - 1)) and merges duplicate
// grid points, keeping the first occurrence. Input must be in [0,1]^3.
PointCloud voxelize_quantize(const PointCloud& pc, int bits = 10);

// Inverse of the grid mapping: g / (2^bits - 1).
PointCloud dequantize_grid(const PointCloud& pc, int bits = 10);

// Optional percentile-radius outlier filter (off by default in the
// pipeline): drops points whose distance to the centroid exceeds the
// given percentile of all such distances.
PointCloud filter_outliers_percentile(const PointCloud& pc,
                                      double percentile = 99.0);

enum class SyntheticShape { sphere_surface, plane, gaussian_clusters };

SyntheticShape shape_from_name(const std::string& name);

// Deterministic synthetic clouds. density_contrast > 1 concentrates
// proportionally more points in a designated sub-region so density
// statistics have nontrivial spread.
PointCloud generate_synthetic(SyntheticShape shape, std::size_t n,
                              double density_contrast, std::uint64_t seed);

}  // namespace prodat::io
