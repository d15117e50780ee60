#pragma once

#include <cstdint>
#include <vector>

#include "panoloc/dataset.hpp"
#include "panoloc/geometry.hpp"
#include "panoloc/tensor.hpp"

namespace panoloc {

struct SynthParams {
  long image_h = 128;           // panorama is H x 2H
  double submap_radius = 30.0;
  double spacing = 3.0;         // place spacing along the path
  double sensor_height = 1.6;
  double ground_density = 1.0;  // points per square meter
  double box_density = 4.0;     // points per square meter of box surface
  double box_probability = 0.9; // chance of a box per candidate slot
  double point_noise = 0.01;    // surface sampling jitter, meters
  int supersample = 3;          // anti-aliasing subsamples per pixel axis
};

struct SynthBox {
  Eigen::Vector3d center;
  Eigen::Vector3d half;   // half extents
  Eigen::Vector3d color;  // RGB in [0.3, 1.0]
};

// Procedural world of a ground plane plus colored boxes scattered along a
// smooth driving path. Panoramas are rendered by ray casting with the same
// pixel-to-sphere convention the network uses, and sub-maps are sampled from
// the same surfaces, so each place yields a geometrically consistent
// cross-modal pair. Fully deterministic under seed.
class SynthWorld {
 public:
  SynthWorld(std::uint64_t seed, long n_places, const SynthParams& params = {});

  const SynthParams& params() const { return params_; }
  const std::vector<Pose>& places() const { return places_; }
  const std::vector<SynthBox>& boxes() const { return boxes_; }
  // Replaces the procedural boxes with a hand-built arrangement.
  void set_boxes(std::vector<SynthBox> boxes) { boxes_ = std::move(boxes); }

  // Equirectangular render from the pose (3 x H x 2H, values in [0, 1]).
  // The ground carries the background shade, so a world without boxes
  // renders as pure background.
  Tensor render(const Pose& pose) const;

  // Surface point sample within submap_radius, in the pose's yaw-only local
  // frame, ground included.
  std::vector<Eigen::Vector3d> sample_submap_local(const Pose& pose, std::uint64_t seed) const;

  // A pose displaced at most max_offset meters horizontally from place
  // `index`, with jittered heading; used for held-out query renders.
  Pose perturbed_place(size_t index, double max_offset, std::uint64_t seed) const;

  static constexpr double kBackground = 0.05;
  static bool is_background(double r, double g, double b) {
    return r == kBackground && g == kBackground && b == kBackground;
  }

 private:
  SynthParams params_;
  std::vector<Pose> places_;
  std::vector<SynthBox> boxes_;
};

// Renders the image and samples the sub-map (ground included) for each of
// n_places poses along the path.
std::vector<SamplePair> synth_scene(std::uint64_t seed, long n_places,
                                    const SynthParams& params = {});

}  // namespace panoloc
