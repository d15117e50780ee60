#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace panoloc {

// Run configuration shared by every command. Defaults follow the published
// training setup where one exists (batch 8, 50 epochs, learning rate 1e-4,
// 256-d descriptors, 4096 points, loss weights 1 / 0.1 / 1); everything is
// overridable from the JSON config file.
struct RunConfig {
  // Model.
  std::string backbone = "spherical";  // "spherical" | "planar"
  bool attention = true;
  long clusters = 64;         // K
  long descriptor_dim = 256;  // D
  long se_reduction = 16;     // r
  std::vector<long> image_widths = {64, 128, 256, 512};
  std::vector<long> point_widths = {64, 64, 64, 128, 1024};
  long image_h = 512;
  long image_w = 1024;
  long num_points = 4096;  // N_d

  // Loss.
  double margin = 0.5;
  int n_neg = 2;
  double mu = 1.0;
  double lambda = 0.1;
  double nu = 1.0;

  // Training.
  long batch_size = 8;
  long epochs = 50;
  double learning_rate = 1e-4;
  std::string optimizer = "adam";  // "adam" | "sgd" | "split"
  double lr_decay = 1.0;           // step-decay hook; 1.0 = constant
  long lr_decay_every = 0;         // epochs between decays; 0 = off
  std::uint64_t seed = 1234;
  bool resample_positives = true;  // redraw positives/negatives each epoch
  bool augment = true;

  // Data.
  std::string data_root;
  double submap_radius = 30.0;
  double voxel_size = 0.2;
  double query_spacing = 3.0;
  double pos_radius = 20.0;
  double neg_radius = 40.0;

  // Augmentation strengths.
  double aug_brightness = 0.2;
  double aug_contrast = 0.2;
  double aug_yaw_deg = 10.0;
  double aug_noise = 0.02;

  bool spherical() const { return backbone == "spherical"; }
  void validate() const;
};

RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& json_text);

// Data root resolution: the config value, overridden by $PANOLOC_DATA_ROOT
// when set.
std::string resolve_data_root(const RunConfig& cfg);

}  // namespace panoloc
