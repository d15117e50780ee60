#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "panoloc/checkpoint.hpp"
#include "panoloc/config.hpp"
#include "panoloc/dataset.hpp"
#include "panoloc/embedding.hpp"
#include "panoloc/losses.hpp"
#include "panoloc/optim.hpp"
#include "panoloc/retrieval.hpp"
#include "panoloc/synth.hpp"

namespace panoloc {

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestSample {
  long id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double heading = 0.0;
  std::string image_path;   // relative to the manifest directory unless absolute
  std::string submap_path;
  std::string split = "train";  // "train" | "heldout"
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  double submap_radius = 30.0;
  std::array<double, 3> channel_mean = {0.5, 0.5, 0.5};
  std::array<double, 3> channel_std = {0.25, 0.25, 0.25};
  std::vector<ManifestSample> samples;
  std::string root;  // directory containing the manifest; not serialized

  std::string resolve(const std::string& path) const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

// Per-channel standardization with the manifest's training-set statistics.
Tensor standardize_image(const Tensor& image, const Manifest& manifest);

// ---------------------------------------------------------------------------
// Model bundle

class CrossModalModel {
 public:
  explicit CrossModalModel(const RunConfig& cfg);

  void init(std::uint64_t seed);
  void set_training(bool t);
  std::vector<TensorRef> state();
  std::vector<TensorRef> parameters();

  Checkpoint to_checkpoint(long epoch) const;
  // Rejects architecture mismatches (K, D, backbone flag, widths, ...) with a
  // descriptive error before any tensor is touched.
  void load_weights(const Checkpoint& ckpt);

  static RunConfig config_from_checkpoint(const Checkpoint& ckpt);
  static long epoch_from_checkpoint(const Checkpoint& ckpt);

  const RunConfig& config() const { return cfg_; }
  ImageBranch& image() { return *image_; }
  PointBranch& point() { return *point_; }

 private:
  RunConfig cfg_;
  std::unique_ptr<ImageBranch> image_;
  std::unique_ptr<PointBranch> point_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::string manifest_path;
  std::string out_dir;
  std::string resume_checkpoint;  // continue epoch counter and optimizer state
  bool keep_epoch_checkpoints = false;
  bool quiet = false;
};

struct EpochLog {
  long epoch = 0;
  double cross_modal = 0.0;
  double same_modal = 0.0;
  double anchor = 0.0;
  double total = 0.0;
  long tuples = 0;
};

std::vector<EpochLog> train_model(const RunConfig& cfg, const TrainOptions& options);

// ---------------------------------------------------------------------------
// Embedding and evaluation

struct DescriptorFile {
  std::string modality;  // "image" | "points"
  long dim = 0;
  std::vector<DbEntry> entries;
};

void write_descriptors(const std::string& path, const DescriptorFile& file);
DescriptorFile read_descriptors(const std::string& path);

// Embeds every manifest sample of the modality (optionally filtered by
// split); descriptors are deterministic for a fixed checkpoint + manifest.
DescriptorFile embed_manifest(CrossModalModel& model, const Manifest& manifest,
                              const std::string& modality, const std::string& split_filter = "");

struct EvalReport {
  std::string direction;
  size_t n_queries = 0;
  size_t db_size = 0;
  long k_1pct = 1;
  std::vector<double> recall;  // recall[k-1] for k = 1..recall.size()
  double recall_1pct = 0.0;
};

EvalReport evaluate_retrieval(const DescriptorFile& queries, const DescriptorFile& database,
                              const std::string& direction, double query_spacing = 10.0,
                              double same_place = 20.0, long max_k = 25);

// Structured text table plus machine-readable comma-separated rows.
void write_report(const std::string& path, const EvalReport& report);

// ---------------------------------------------------------------------------
// Dataset preparation

struct PrepareSynthOptions {
  long n_places = 64;
  std::uint64_t seed = 7;
  long heldout = 0;             // perturbed-view renders for evaluation
  double heldout_offset = 5.0;  // max displacement of held-out viewpoints
};

// Builds a synthetic paired dataset under out_dir (images/, submaps/,
// manifest.json). Sub-maps are stored after ground removal.
std::string prepare_synthetic(const RunConfig& cfg, const PrepareSynthOptions& options,
                              const std::string& out_dir);

// Builds a dataset from a real sequence directory (poses.txt, images/,
// scans/): accumulates the global map, cuts and cleans per-pose sub-maps.
std::string prepare_sequence(const RunConfig& cfg, const std::string& seq_dir,
                             const std::string& out_dir);

}  // namespace panoloc
