#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "panoloc/geometry.hpp"
#include "panoloc/tensor.hpp"

namespace panoloc {

// Accumulated map-frame cloud for one sequence.
struct GlobalMap {
  std::vector<Eigen::Vector3d> points;
  std::string source;
};

// Local point-cloud patch around a pose; the retrieval unit. Points are
// expressed in the pose's yaw-only local frame (z stays vertical), so
// horizontal norms match map-frame horizontal distances to the pose.
struct Submap {
  long id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // map frame
  double heading = 0.0;
  std::vector<Eigen::Vector3d> points;
};

// One pose's cross-modal pair: the panorama and the sub-map it must match.
struct SamplePair {
  long id = 0;
  Tensor image;  // 3 x H x W, values in [0, 1]
  Submap submap;
};

// Transforms each scan by its pose, concatenates, and optionally thins by
// keeping the first point per voxel cell. voxel_size <= 0 disables thinning.
GlobalMap build_global_map(const std::vector<std::vector<Eigen::Vector3d>>& scans,
                           const std::vector<Pose>& poses, double voxel_size = 0.2);

// All map points within horizontal distance <= radius of the pose,
// re-expressed in the pose's yaw-only local frame. Empty result is an error.
Submap cut_submap(const GlobalMap& map, const Pose& pose, double radius);

struct GroundRemovalParams {
  double inlier_dist = 0.2;
  int iterations = 200;
  std::uint64_t seed = 42;
  double max_tilt_deg = 15.0;       // plane normal tilt from vertical
  double min_inlier_frac = 0.5;     // consensus required to count as ground
  long min_points = 50;
};

struct PlaneModel {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // unit length
  double offset = 0.0;                                // plane: normal . p + offset = 0
};

// Plane through three points; nullopt when they are (near-)collinear.
std::optional<PlaneModel> plane_from_points(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                            const Eigen::Vector3d& c);

// Draws three distinct indices from [0, n). Shared with the test oracle so a
// replay at the same seed scores the same candidate planes.
std::array<size_t, 3> sample_triple(std::mt19937_64& rng, size_t n);

// Random-sample-consensus dominant-plane removal. Inliers are dropped only
// when the best plane is near-horizontal (normal within max_tilt_deg of
// vertical) and holds at least min_inlier_frac of the points; otherwise the
// input comes back unchanged.
Submap remove_ground(const Submap& submap, const GroundRemovalParams& params = {});

// Uniform selection of n points: without replacement when enough points
// exist, with replacement otherwise. Deterministic under seed.
std::vector<Eigen::Vector3d> subsample_points(const std::vector<Eigen::Vector3d>& points, long n,
                                              std::uint64_t seed);

struct MiningParams {
  double spacing = 3.0;
  double pos_radius = 20.0;
  double neg_radius = 40.0;
  int n_neg = 2;
  std::uint64_t seed = 0;
};

struct TrainingTupleIdx {
  size_t query = 0;
  size_t positive = 0;
  std::vector<size_t> negatives;
};

struct MiningResult {
  std::vector<TrainingTupleIdx> tuples;
  long skipped = 0;  // queries lacking a positive or enough negatives
};

// Greedy queries along the trajectory at >= spacing, one positive drawn
// uniformly within pos_radius (excluding the query), n_neg negatives drawn
// uniformly beyond neg_radius. Horizontal (2-D) distances throughout.
// Per-query draws are seeded by (seed, query index), so results do not depend
// on processing order.
MiningResult mine_training_tuples(const std::vector<Eigen::Vector3d>& positions,
                                  const MiningParams& params);

double horizontal_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

struct AugmentParams {
  double brightness = 0.2;   // multiplicative jitter, factor in [1-b, 1+b]
  double contrast = 0.2;     // contrast jitter about the image mean
  double yaw_deg = 10.0;     // circular column roll, degrees
  double noise_std = 0.02;   // Gaussian pixel noise, [0,1] units
};

// Circular column shift by yaw degrees (rounded to whole columns; 360 degrees
// is the identity).
Tensor roll_columns(const Tensor& image, double yaw_deg);

// Brightness/contrast jitter, small random yaw roll, per-pixel Gaussian
// noise. Zero-strength parameters reproduce the input bit-exactly;
// deterministic under seed.
Tensor augment_image(const Tensor& image, const AugmentParams& params, std::uint64_t seed);

// Packed little-endian float32 x,y,z triples.
void write_scan_bin(const std::string& path, const std::vector<Eigen::Vector3d>& points);
std::vector<Eigen::Vector3d> read_scan_bin(const std::string& path);

}  // namespace panoloc
