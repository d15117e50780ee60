#include "panoloc/synth.hpp"

#include <cmath>
#include <limits>

#include "panoloc/rng.hpp"
#include "panoloc/sphere_grid.hpp"

namespace panoloc {

namespace {

// Path centerline: gentle lateral sweep so headings vary along the route.
Eigen::Vector3d path_point(double s) { return {s, 8.0 * std::sin(s / 30.0), 0.0}; }

double path_heading(double s) { return std::atan2(8.0 / 30.0 * std::cos(s / 30.0), 1.0); }

Eigen::Matrix3d yaw_matrix(double h) {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  const double c = std::cos(h), s = std::sin(h);
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return r;
}

// Slab-method ray/box intersection. Returns entry distance and the axis of
// the entering face (0=x, 1=y, 2=z), or a negative distance on miss.
struct BoxHit {
  double t = -1.0;
  int axis = 0;
};

BoxHit ray_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const SynthBox& box) {
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    const double lo = box.center[a] - box.half[a];
    const double hi = box.center[a] + box.half[a];
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo || origin[a] > hi) return {};
      continue;
    }
    double t0 = (lo - origin[a]) / dir[a];
    double t1 = (hi - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return {};
  }
  if (tmin <= 1e-9) return {};  // origin inside or touching
  return {tmin, axis};
}

}  // namespace

SynthWorld::SynthWorld(std::uint64_t seed, long n_places, const SynthParams& params)
    : params_(params) {
  if (n_places < 1) throw std::invalid_argument("SynthWorld: n_places must be >= 1");

  places_.reserve(static_cast<size_t>(n_places));
  for (long i = 0; i < n_places; ++i) {
    const double s = static_cast<double>(i) * params_.spacing;
    Pose p;
    p.frame_id = i;
    p.position = path_point(s);
    p.rotation = yaw_matrix(path_heading(s));
    places_.push_back(p);
  }

  // Boxes in slots every ~5 m along the path, offset to either side.
  std::mt19937_64 rng = make_rng(seed, 0xB0C5);
  const double s_end = static_cast<double>(n_places - 1) * params_.spacing + 20.0;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> lateral(6.0, 22.0);
  std::uniform_real_distribution<double> half_xy(1.5, 3.5);
  std::uniform_real_distribution<double> half_h(1.5, 4.0);
  std::uniform_real_distribution<double> color(0.3, 1.0);
  std::uniform_real_distribution<double> jitter(-2.0, 2.0);
  for (double s = -20.0; s <= s_end; s += 5.0) {
    for (int side = -1; side <= 1; side += 2) {
      if (u01(rng) > params_.box_probability) continue;
      const double h = path_heading(s);
      const Eigen::Vector3d center_line = path_point(s + jitter(rng));
      const Eigen::Vector3d normal(-std::sin(h), std::cos(h), 0.0);
      SynthBox box;
      const double offset = lateral(rng);
      box.half = {half_xy(rng), half_xy(rng), half_h(rng)};
      box.center = center_line + static_cast<double>(side) * offset * normal;
      box.center.z() = box.half.z();  // sits on the ground
      box.color = {color(rng), color(rng), color(rng)};
      boxes_.push_back(box);
    }
  }
}

Tensor SynthWorld::render(const Pose& pose) const {
  const long H = params_.image_h, W = 2 * params_.image_h;
  const int ss = std::max(1, params_.supersample);
  Tensor img({3, H, W});
  const Eigen::Vector3d origin = pose.position + Eigen::Vector3d(0, 0, params_.sensor_height);
  const Eigen::Matrix3d rot = yaw_matrix(pose.heading());

  for (long r = 0; r < H; ++r) {
    for (long c = 0; c < W; ++c) {
      // Nearest hit among the subsample rays wins, so any pixel partially
      // covered by a box shows that box rather than the background.
      double best = std::numeric_limits<double>::infinity();
      Eigen::Vector3d color(kBackground, kBackground, kBackground);
      for (int si = 0; si < ss; ++si) {
        for (int sj = 0; sj < ss; ++sj) {
          const double fr =
              static_cast<double>(r) + (static_cast<double>(si) + 0.5) / static_cast<double>(ss) -
              0.5;
          const double fc =
              static_cast<double>(c) + (static_cast<double>(sj) + 0.5) / static_cast<double>(ss) -
              0.5;
          const SphereCoord sc = pixf_to_sphere(fr, fc, H, W);
          const Eigen::Vector3d local(std::cos(sc.lat) * std::cos(sc.lon),
                                      std::cos(sc.lat) * std::sin(sc.lon), std::sin(sc.lat));
          const Eigen::Vector3d dir = rot * local;
          double t = std::numeric_limits<double>::infinity();
          const SynthBox* hit = nullptr;
          int axis = 0;
          for (const SynthBox& box : boxes_) {
            const BoxHit h = ray_box(origin, dir, box);
            if (h.t > 0.0 && h.t < t) {
              t = h.t;
              hit = &box;
              axis = h.axis;
            }
          }
          if (hit && t < best) {
            best = t;
            const double shade = axis == 2 ? 1.0 : (axis == 0 ? 0.8 : 0.65);
            color = hit->color * shade;
          }
        }
      }
      img(0, r, c) = color.x();
      img(1, r, c) = color.y();
      img(2, r, c) = color.z();
    }
  }
  return img;
}

std::vector<Eigen::Vector3d> SynthWorld::sample_submap_local(const Pose& pose,
                                                             std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, params_.point_noise);
  const double radius = params_.submap_radius;
  std::vector<Eigen::Vector3d> world;

  // Ground disk around the pose.
  const double ground_area = M_PI * radius * radius;
  const long n_ground = static_cast<long>(ground_area * params_.ground_density);
  for (long i = 0; i < n_ground; ++i) {
    const double rr = radius * std::sqrt(u01(rng));
    const double th = 2.0 * M_PI * u01(rng);
    world.emplace_back(pose.position.x() + rr * std::cos(th),
                       pose.position.y() + rr * std::sin(th), noise(rng));
  }

  // Box faces (sides and top; the bottom sits on the ground).
  for (const SynthBox& box : boxes_) {
    const Eigen::Vector3d& h = box.half;
    struct Face {
      int axis;
      double sign;
      double area;
    };
    const Face faces[5] = {{0, -1.0, 4.0 * h.y() * h.z()}, {0, 1.0, 4.0 * h.y() * h.z()},
                           {1, -1.0, 4.0 * h.x() * h.z()}, {1, 1.0, 4.0 * h.x() * h.z()},
                           {2, 1.0, 4.0 * h.x() * h.y()}};
    for (const Face& f : faces) {
      const long n = static_cast<long>(f.area * params_.box_density);
      for (long i = 0; i < n; ++i) {
        Eigen::Vector3d p = box.center;
        p[f.axis] += f.sign * h[f.axis];
        const int a1 = (f.axis + 1) % 3, a2 = (f.axis + 2) % 3;
        p[a1] += (2.0 * u01(rng) - 1.0) * h[a1];
        p[a2] += (2.0 * u01(rng) - 1.0) * h[a2];
        p += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
        if (horizontal_distance(p, pose.position) <= radius) world.push_back(p);
      }
    }
  }

  // To the pose's yaw-only local frame.
  const double heading = pose.heading();
  const double c = std::cos(-heading), s = std::sin(-heading);
  std::vector<Eigen::Vector3d> local;
  local.reserve(world.size());
  for (const Eigen::Vector3d& p : world) {
    const Eigen::Vector3d d = p - pose.position;
    local.emplace_back(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
  }
  return local;
}

Pose SynthWorld::perturbed_place(size_t index, double max_offset, std::uint64_t seed) const {
  const Pose& base = places_.at(index);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double rr = max_offset * std::sqrt(u01(rng));
  const double th = 2.0 * M_PI * u01(rng);
  std::uniform_real_distribution<double> dh(-15.0 * M_PI / 180.0, 15.0 * M_PI / 180.0);
  Pose p = base;
  p.position.x() += rr * std::cos(th);
  p.position.y() += rr * std::sin(th);
  p.rotation = yaw_matrix(base.heading() + dh(rng));
  return p;
}

std::vector<SamplePair> synth_scene(std::uint64_t seed, long n_places, const SynthParams& params) {
  SynthWorld world(seed, n_places, params);
  std::vector<SamplePair> pairs;
  pairs.reserve(static_cast<size_t>(n_places));
  for (size_t i = 0; i < world.places().size(); ++i) {
    const Pose& pose = world.places()[i];
    SamplePair pair;
    pair.id = pose.frame_id;
    pair.image = world.render(pose);
    pair.submap.id = pose.frame_id;
    pair.submap.position = pose.position;
    pair.submap.heading = pose.heading();
    pair.submap.points = world.sample_submap_local(pose, mix_seed(seed, 0x50B + i));
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace panoloc
