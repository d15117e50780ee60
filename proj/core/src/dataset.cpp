#include "panoloc/dataset.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "panoloc/rng.hpp"

namespace panoloc {

namespace {

struct VoxelKey {
  long x, y, z;
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelHash {
  size_t operator()(const VoxelKey& k) const {
    size_t h = std::hash<long>()(k.x);
    h ^= std::hash<long>()(k.y) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= std::hash<long>()(k.z) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

}  // namespace

double horizontal_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  return std::sqrt(dx * dx + dy * dy);
}

GlobalMap build_global_map(const std::vector<std::vector<Eigen::Vector3d>>& scans,
                           const std::vector<Pose>& poses, double voxel_size) {
  if (scans.size() != poses.size()) {
    throw std::invalid_argument("build_global_map: " + std::to_string(scans.size()) +
                                " scans for " + std::to_string(poses.size()) + " poses");
  }
  GlobalMap map;
  std::unordered_set<VoxelKey, VoxelHash> seen;
  for (size_t i = 0; i < scans.size(); ++i) {
    const Pose& pose = poses[i];
    for (const Eigen::Vector3d& p : scans[i]) {
      const Eigen::Vector3d q = pose.rotation * p + pose.position;
      if (!q.allFinite()) throw std::invalid_argument("build_global_map: non-finite point");
      if (voxel_size > 0.0) {
        const VoxelKey key{static_cast<long>(std::floor(q.x() / voxel_size)),
                           static_cast<long>(std::floor(q.y() / voxel_size)),
                           static_cast<long>(std::floor(q.z() / voxel_size))};
        if (!seen.insert(key).second) continue;
      }
      map.points.push_back(q);
    }
  }
  return map;
}

Submap cut_submap(const GlobalMap& map, const Pose& pose, double radius) {
  if (radius <= 0.0) throw std::invalid_argument("cut_submap: radius must be positive");
  Submap sub;
  sub.id = pose.frame_id;
  sub.position = pose.position;
  sub.heading = pose.heading();
  const double c = std::cos(-sub.heading), s = std::sin(-sub.heading);
  for (const Eigen::Vector3d& p : map.points) {
    if (horizontal_distance(p, pose.position) > radius) continue;
    const Eigen::Vector3d d = p - pose.position;
    sub.points.emplace_back(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
  }
  if (sub.points.empty()) {
    throw std::runtime_error("cut_submap: no map points within " + std::to_string(radius) +
                             " m of pose " + std::to_string(pose.frame_id));
  }
  return sub;
}

std::optional<PlaneModel> plane_from_points(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                            const Eigen::Vector3d& c) {
  const Eigen::Vector3d n = (b - a).cross(c - a);
  const double len = n.norm();
  if (len < 1e-12) return std::nullopt;
  PlaneModel m;
  m.normal = n / len;
  m.offset = -m.normal.dot(a);
  return m;
}

std::array<size_t, 3> sample_triple(std::mt19937_64& rng, size_t n) {
  std::uniform_int_distribution<size_t> dist(0, n - 1);
  std::array<size_t, 3> idx;
  idx[0] = dist(rng);
  do {
    idx[1] = dist(rng);
  } while (idx[1] == idx[0]);
  do {
    idx[2] = dist(rng);
  } while (idx[2] == idx[0] || idx[2] == idx[1]);
  return idx;
}

Submap remove_ground(const Submap& submap, const GroundRemovalParams& params) {
  const size_t n = submap.points.size();
  if (static_cast<long>(n) < params.min_points) {
    throw std::invalid_argument("remove_ground: need at least " +
                                std::to_string(params.min_points) + " points, got " +
                                std::to_string(n));
  }
  std::mt19937_64 rng(params.seed);
  PlaneModel best;
  long best_inliers = -1;
  for (int it = 0; it < params.iterations; ++it) {
    const auto idx = sample_triple(rng, n);
    const auto m = plane_from_points(submap.points[idx[0]], submap.points[idx[1]],
                                     submap.points[idx[2]]);
    if (!m) continue;
    long inliers = 0;
    for (const Eigen::Vector3d& p : submap.points) {
      if (std::abs(m->normal.dot(p) + m->offset) <= params.inlier_dist) ++inliers;
    }
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best = *m;
    }
  }

  const double tilt = std::acos(std::min(1.0, std::abs(best.normal.z())));
  const bool vertical_enough = tilt <= params.max_tilt_deg * M_PI / 180.0;
  const bool dominant = best_inliers >= 0 &&
                        static_cast<double>(best_inliers) >=
                            params.min_inlier_frac * static_cast<double>(n);
  if (!vertical_enough || !dominant) return submap;

  Submap out;
  out.id = submap.id;
  out.position = submap.position;
  out.heading = submap.heading;
  for (const Eigen::Vector3d& p : submap.points) {
    if (std::abs(best.normal.dot(p) + best.offset) > params.inlier_dist) out.points.push_back(p);
  }
  return out;
}

std::vector<Eigen::Vector3d> subsample_points(const std::vector<Eigen::Vector3d>& points, long n,
                                              std::uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("subsample_points: empty point set");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<size_t>(n));
  const long m = static_cast<long>(points.size());
  if (m >= n) {
    std::vector<long> idx(static_cast<size_t>(m));
    for (long i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
    // Partial Fisher-Yates: the first n entries become the sample.
    for (long i = 0; i < n; ++i) {
      std::uniform_int_distribution<long> dist(i, m - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(dist(rng))]);
      out.push_back(points[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }
  } else {
    std::uniform_int_distribution<long> dist(0, m - 1);
    for (long i = 0; i < n; ++i) out.push_back(points[static_cast<size_t>(dist(rng))]);
  }
  return out;
}

MiningResult mine_training_tuples(const std::vector<Eigen::Vector3d>& positions,
                                  const MiningParams& params) {
  MiningResult result;
  if (positions.empty()) return result;

  // Greedy query selection along the trajectory.
  std::vector<size_t> queries;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (queries.empty() ||
        horizontal_distance(positions[i], positions[queries.back()]) >= params.spacing) {
      queries.push_back(i);
    }
  }

  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const size_t q = queries[qi];
    std::vector<size_t> pos_candidates, neg_candidates;
    for (size_t j = 0; j < positions.size(); ++j) {
      if (j == q) continue;
      const double d = horizontal_distance(positions[q], positions[j]);
      if (d < params.pos_radius) pos_candidates.push_back(j);
      if (d > params.neg_radius) neg_candidates.push_back(j);
    }
    if (pos_candidates.empty() ||
        neg_candidates.size() < static_cast<size_t>(params.n_neg)) {
      ++result.skipped;
      continue;
    }
    std::mt19937_64 rng = make_rng(params.seed, q);
    TrainingTupleIdx tuple;
    tuple.query = q;
    std::uniform_int_distribution<size_t> pdist(0, pos_candidates.size() - 1);
    tuple.positive = pos_candidates[pdist(rng)];
    // Negatives without replacement.
    std::shuffle(neg_candidates.begin(), neg_candidates.end(), rng);
    tuple.negatives.assign(neg_candidates.begin(),
                           neg_candidates.begin() + params.n_neg);
    result.tuples.push_back(std::move(tuple));
  }
  return result;
}

Tensor roll_columns(const Tensor& image, double yaw_deg) {
  if (image.rank() != 3) throw std::invalid_argument("roll_columns: expected 3 x H x W image");
  const long C = image.dim(0), H = image.dim(1), W = image.dim(2);
  long shift = static_cast<long>(std::lround(yaw_deg / 360.0 * static_cast<double>(W))) % W;
  if (shift < 0) shift += W;
  if (shift == 0) return image;
  Tensor out(image.shape());
  for (long c = 0; c < C; ++c) {
    for (long r = 0; r < H; ++r) {
      const double* src = image.data() + (c * H + r) * W;
      double* dst = out.data() + (c * H + r) * W;
      for (long j = 0; j < W; ++j) dst[(j + shift) % W] = src[j];
    }
  }
  return out;
}

Tensor augment_image(const Tensor& image, const AugmentParams& params, std::uint64_t seed) {
  if (image.rank() != 3) throw std::invalid_argument("augment_image: expected 3 x H x W image");
  std::mt19937_64 rng(seed);
  Tensor img = image;

  if (params.yaw_deg > 0.0) {
    std::uniform_real_distribution<double> yaw(-params.yaw_deg, params.yaw_deg);
    img = roll_columns(img, yaw(rng));
  }
  if (params.brightness > 0.0) {
    std::uniform_real_distribution<double> b(1.0 - params.brightness, 1.0 + params.brightness);
    const double f = b(rng);
    for (long i = 0; i < img.numel(); ++i) img[i] *= f;
  }
  if (params.contrast > 0.0) {
    std::uniform_real_distribution<double> c(1.0 - params.contrast, 1.0 + params.contrast);
    const double f = c(rng);
    double mean = 0.0;
    for (long i = 0; i < img.numel(); ++i) mean += img[i];
    mean /= static_cast<double>(img.numel());
    for (long i = 0; i < img.numel(); ++i) img[i] = (img[i] - mean) * f + mean;
  }
  if (params.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, params.noise_std);
    for (long i = 0; i < img.numel(); ++i) img[i] += noise(rng);
  }
  return img;
}

void write_scan_bin(const std::string& path, const std::vector<Eigen::Vector3d>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_scan_bin: cannot open " + path);
  for (const Eigen::Vector3d& p : points) {
    const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
}

std::vector<Eigen::Vector3d> read_scan_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("read_scan_bin: cannot open " + path);
  const std::streamsize bytes = in.tellg();
  if (bytes % (3 * sizeof(float)) != 0) {
    throw std::runtime_error("read_scan_bin: " + path + " is not a packed float32 xyz file");
  }
  in.seekg(0);
  const size_t n = static_cast<size_t>(bytes) / (3 * sizeof(float));
  std::vector<Eigen::Vector3d> points;
  points.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  return points;
}

}  // namespace panoloc
