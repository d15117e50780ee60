#include <doctest.h>

#include <cmath>

#include "panoloc/dataset.hpp"
#include "panoloc/rng.hpp"
#include "panoloc/sphere_grid.hpp"
#include "panoloc/synth.hpp"

using namespace panoloc;

namespace {

SynthParams small_params() {
  SynthParams p;
  p.image_h = 64;
  p.supersample = 2;
  return p;
}

// Fraction of non-ground local points whose projected pixel is non-background.
double projection_consistency(const SynthWorld& world, const Pose& pose, const Tensor& image,
                              const std::vector<Eigen::Vector3d>& local_points) {
  const long H = image.dim(1), W = image.dim(2);
  long hits = 0, total = 0;
  for (const Eigen::Vector3d& p : local_points) {
    if (p.z() < 0.5) continue;  // ground band
    const Eigen::Vector3d d = p - Eigen::Vector3d(0, 0, world.params().sensor_height);
    const double norm = d.norm();
    if (norm < 1e-9) continue;
    const double lat = std::asin(d.z() / norm);
    const double lon = std::atan2(d.y(), d.x());
    long r = static_cast<long>(std::lround(sphere_to_row(lat, H)));
    long c = static_cast<long>(std::lround(sphere_to_col(lon, W)));
    r = std::clamp(r, 0L, H - 1);
    c = ((c % W) + W) % W;
    ++total;
    if (!SynthWorld::is_background(image(0, r, c), image(1, r, c), image(2, r, c))) ++hits;
  }
  if (total == 0) return 1.0;
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("empty world renders pure background and loses all points to ground removal") {
  SynthParams p = small_params();
  p.box_probability = 0.0;
  SynthWorld world(5, 4, p);
  CHECK(world.boxes().empty());

  const Tensor img = world.render(world.places()[0]);
  for (long r = 0; r < img.dim(1); ++r) {
    for (long c = 0; c < img.dim(2); ++c) {
      CHECK(SynthWorld::is_background(img(0, r, c), img(1, r, c), img(2, r, c)));
    }
  }

  Submap sub;
  sub.points = world.sample_submap_local(world.places()[0], 99);
  CHECK(!sub.points.empty());
  const Submap cleaned = remove_ground(sub);
  CHECK(cleaned.points.empty());
}

TEST_CASE("a single box due east peaks image brightness near lon = 0") {
  SynthParams p = small_params();
  p.box_probability = 0.0;
  SynthWorld world(6, 1, p);
  Pose pose;
  pose.position = Eigen::Vector3d::Zero();  // heading 0: +x is lon 0

  SynthBox box;
  box.center = {15.0, 0.0, 2.0};
  box.half = {2.0, 2.0, 2.0};
  box.color = {0.9, 0.8, 0.7};
  world.set_boxes({box});

  const Tensor img = world.render(pose);
  const long H = img.dim(1), W = img.dim(2);
  // Column brightness peaks at lon ~ 0, i.e. near column W/2.
  std::vector<double> col_sum(static_cast<size_t>(W), 0.0);
  for (long c = 0; c < W; ++c) {
    for (long r = 0; r < H; ++r) {
      col_sum[static_cast<size_t>(c)] += img(0, r, c) + img(1, r, c) + img(2, r, c);
    }
  }
  const long peak =
      std::max_element(col_sum.begin(), col_sum.end()) - col_sum.begin();
  CHECK(std::abs(peak - W / 2) <= 2);

  // The point cluster (non-ground) sits at +x, and projects onto box pixels.
  const auto pts = world.sample_submap_local(pose, 31);
  long cluster = 0;
  for (const auto& q : pts) {
    if (q.z() > 0.5) {
      ++cluster;
      CHECK(q.x() > 10.0);
      CHECK(std::abs(q.y()) < 3.0);
    }
  }
  CHECK(cluster > 50);
  CHECK(projection_consistency(world, pose, img, pts) >= 0.95);
}

TEST_CASE("synthetic pairs are geometrically consistent across modalities") {
  SynthParams p = small_params();
  p.image_h = 128;
  p.supersample = 3;
  SynthWorld world(17, 8, p);
  for (size_t i = 0; i < world.places().size(); i += 3) {
    const Pose& pose = world.places()[i];
    const Tensor img = world.render(pose);
    const auto pts = world.sample_submap_local(pose, mix_seed(17, i));
    const double consistency = projection_consistency(world, pose, img, pts);
    CHECK(consistency >= 0.95);
  }
}

TEST_CASE("synth_scene is bit-reproducible under a fixed seed") {
  SynthParams p = small_params();
  const auto a = synth_scene(123, 3, p);
  const auto b = synth_scene(123, 3, p);
  REQUIRE(a.size() == 3);
  REQUIRE(b.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    REQUIRE(a[i].image.numel() == b[i].image.numel());
    for (long j = 0; j < a[i].image.numel(); ++j) CHECK(a[i].image[j] == b[i].image[j]);
    REQUIRE(a[i].submap.points.size() == b[i].submap.points.size());
    for (size_t j = 0; j < a[i].submap.points.size(); ++j) {
      CHECK(a[i].submap.points[j] == b[i].submap.points[j]);
    }
  }
  const auto c = synth_scene(124, 3, p);
  double diff = 0.0;
  for (long j = 0; j < a[0].image.numel(); ++j) diff += std::abs(a[0].image[j] - c[0].image[j]);
  CHECK(diff > 0.0);
}

TEST_CASE("perturbed places stay within the requested offset") {
  SynthWorld world(9, 10, small_params());
  for (int i = 0; i < 20; ++i) {
    const Pose p = world.perturbed_place(3, 5.0, mix_seed(9, 100 + i));
    CHECK(horizontal_distance(p.position, world.places()[3].position) <= 5.0 + 1e-9);
  }
}

TEST_CASE("submap points stay within the configured radius") {
  SynthParams p = small_params();
  SynthWorld world(21, 6, p);
  const Pose& pose = world.places()[2];
  const auto pts = world.sample_submap_local(pose, 7);
  for (const auto& q : pts) {
    CHECK(q.head<2>().norm() <= p.submap_radius + 0.1);  // sampling jitter margin
  }
}
