#pragma once

#include <cstddef>
#include <vector>

#include "volume.hpp"

namespace voxseed {

// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const Mask3D& pred, const Mask3D& gt);

// Foreground voxels with at least one 6-neighbour that is background or
// outside the volume, in ascending linear index order.
std::vector<std::size_t> extract_surface(const Mask3D& m);

// Exact Euclidean distance (mm) from every voxel to the nearest foreground
// voxel, via separable lower-envelope passes over squared distances.
ScalarGrid distance_transform(const Mask3D& m, const Spacing& spacing);

// Squared distances in mm^2, double precision.
ScalarGridT<double> squared_distance_transform(const Mask3D& m, const Spacing& spacing);

// Nearest-rank percentile: the ceil(q * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double q);

// Symmetric 95th-percentile surface distance in mm: the larger of the two
// directed percentiles. Throws EmptyMaskError if either mask is empty.
double hd95(const Mask3D& pred, const Mask3D& gt, const Spacing& spacing);

// Distance between opposite volume corners, used when HD95 is undefined.
double volume_diagonal_mm(const Dims& dims, const Spacing& spacing);

}  // namespace voxseed
