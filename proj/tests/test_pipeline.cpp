#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "panoloc/checkpoint.hpp"
#include "panoloc/config.hpp"
#include "panoloc/trainer.hpp"

using namespace panoloc;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "panoloc_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.image_h = 96;
  cfg.image_w = 192;
  cfg.image_widths = {4, 8, 8, 8};
  cfg.point_widths = {8, 8, 16};
  cfg.clusters = 4;
  cfg.descriptor_dim = 16;
  cfg.se_reduction = 4;
  cfg.num_points = 128;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.n_neg = 1;
  cfg.seed = 77;
  return cfg;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: defaults follow the published setup and round-trip via JSON") {
  RunConfig def;
  CHECK(def.batch_size == 8);
  CHECK(def.epochs == 50);
  CHECK(def.learning_rate == doctest::Approx(1e-4));
  CHECK(def.descriptor_dim == 256);
  CHECK(def.num_points == 4096);
  CHECK(def.mu == doctest::Approx(1.0));
  CHECK(def.lambda == doctest::Approx(0.1));
  CHECK(def.nu == doctest::Approx(1.0));
  CHECK(def.clusters == 64);
  CHECK(def.image_h == 512);
  CHECK(def.image_w == 1024);
  CHECK(def.backbone == "spherical");
  CHECK(def.attention);

  RunConfig cfg = tiny_config();
  cfg.optimizer = "split";
  cfg.margin = 0.37;
  const std::string path = temp_dir("config") + "/cfg.json";
  save_config(path, cfg);
  const RunConfig back = load_config(path);
  CHECK(back.optimizer == "split");
  CHECK(back.margin == doctest::Approx(0.37));
  CHECK(back.image_widths == cfg.image_widths);
  CHECK(back.seed == cfg.seed);

  RunConfig bad = tiny_config();
  bad.backbone = "cylindrical";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_config();
  bad.image_w = 100;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint: round trip, version gate, config mismatch rejection") {
  std::mt19937_64 rng(1);
  RunConfig cfg = tiny_config();
  CrossModalModel model(cfg);
  model.init(5);

  const std::string dir = temp_dir("ckpt");
  const std::string path = dir + "/model.bin";
  save_checkpoint(path, model.to_checkpoint(3));

  const Checkpoint back = load_checkpoint(path);
  CHECK(CrossModalModel::epoch_from_checkpoint(back) == 3);
  const RunConfig recovered = CrossModalModel::config_from_checkpoint(back);
  CHECK(recovered.clusters == cfg.clusters);
  CHECK(recovered.descriptor_dim == cfg.descriptor_dim);

  CrossModalModel loaded(recovered);
  loaded.load_weights(back);
  auto a = model.state();
  auto b = loaded.state();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (long j = 0; j < a[i].value->numel(); ++j) {
      CHECK((*a[i].value)[j] == (*b[i].value)[j]);
    }
  }

  // Architecture mismatches are rejected with the offending field named.
  RunConfig other = cfg;
  other.clusters = 8;
  CrossModalModel wrong(other);
  try {
    wrong.load_weights(back);
    FAIL("expected mismatch rejection");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("clusters") != std::string::npos);
  }

  other = cfg;
  other.backbone = "planar";
  CrossModalModel wrong2(other);
  CHECK_THROWS_AS(wrong2.load_weights(back), std::runtime_error);

  // Corrupt magic is not a checkpoint.
  const std::string junk = dir + "/junk.bin";
  std::ofstream(junk) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(junk), std::runtime_error);

  // Metadata without a version field cannot be saved.
  Checkpoint no_version;
  no_version.meta_json = "{}";
  CHECK_THROWS_AS(save_checkpoint(dir + "/nv.bin", no_version), std::invalid_argument);
}

TEST_CASE("manifest round trip preserves samples and statistics") {
  const std::string dir = temp_dir("manifest");
  Manifest m;
  m.seed = 99;
  m.submap_radius = 25.0;
  m.channel_mean = {0.1, 0.2, 0.3};
  m.channel_std = {0.4, 0.5, 0.6};
  ManifestSample s;
  s.id = 7;
  s.position = {1.5, -2.5, 0.25};
  s.heading = 0.3;
  s.image_path = "images/000007.png";
  s.submap_path = "submaps/000007.bin";
  s.split = "heldout";
  m.samples.push_back(s);
  save_manifest(dir + "/manifest.json", m);
  const Manifest back = load_manifest(dir + "/manifest.json");
  CHECK(back.seed == 99);
  CHECK(back.submap_radius == doctest::Approx(25.0));
  CHECK(back.channel_mean[2] == doctest::Approx(0.3));
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].id == 7);
  CHECK(back.samples[0].split == "heldout");
  CHECK(back.samples[0].position.y() == doctest::Approx(-2.5));
  CHECK(back.root == dir);
  CHECK(back.resolve("images/000007.png") == dir + "/images/000007.png");
  CHECK(back.resolve("/abs/path.png") == "/abs/path.png");
}

TEST_CASE("prepare + train + embed pipeline: determinism and contracts") {
  RunConfig cfg = tiny_config();
  cfg.epochs = 1;

  const std::string data_dir = temp_dir("pipe_data");
  PrepareSynthOptions opt;
  opt.n_places = 24;
  opt.seed = 5;
  opt.heldout = 2;
  const std::string manifest_path = prepare_synthetic(cfg, opt, data_dir);

  const Manifest manifest = load_manifest(manifest_path);
  CHECK(manifest.samples.size() == 26);
  long heldout = 0;
  for (const auto& s : manifest.samples) {
    if (s.split == "heldout") ++heldout;
  }
  CHECK(heldout == 2);

  // Re-running with the same seed reproduces the manifest byte-for-byte.
  const std::string data_dir2 = temp_dir("pipe_data2");
  const std::string manifest_path2 = prepare_synthetic(cfg, opt, data_dir2);
  CHECK(file_bytes(manifest_path) == file_bytes(manifest_path2));
  CHECK(file_bytes(data_dir + "/images/000003.png") ==
        file_bytes(data_dir2 + "/images/000003.png"));
  CHECK(file_bytes(data_dir + "/submaps/000003.bin") ==
        file_bytes(data_dir2 + "/submaps/000003.bin"));

  // One training epoch runs, logs, and checkpoints.
  const std::string run_dir = temp_dir("pipe_run");
  TrainOptions topt;
  topt.manifest_path = manifest_path;
  topt.out_dir = run_dir;
  topt.quiet = true;
  const auto logs = train_model(cfg, topt);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].tuples > 0);
  CHECK(std::isfinite(logs[0].total));
  CHECK(fs::exists(run_dir + "/checkpoint_latest.bin"));
  CHECK(fs::exists(run_dir + "/checkpoint_final.bin"));
  CHECK(fs::exists(run_dir + "/loss_log.csv"));

  // Resume continues the epoch counter and optimizer state.
  RunConfig cfg2 = cfg;
  cfg2.epochs = 2;
  TrainOptions ropt = topt;
  ropt.out_dir = temp_dir("pipe_resume");
  ropt.resume_checkpoint = run_dir + "/checkpoint_final.bin";
  const auto rlogs = train_model(cfg2, ropt);
  REQUIRE(rlogs.size() == 1);
  CHECK(rlogs[0].epoch == 1);

  // Embedding is deterministic and unit-norm; the library call matches a
  // second invocation exactly.
  Checkpoint ckpt = load_checkpoint(run_dir + "/checkpoint_final.bin");
  CrossModalModel model(CrossModalModel::config_from_checkpoint(ckpt));
  model.load_weights(ckpt);
  const DescriptorFile img1 = embed_manifest(model, manifest, "image", "train");
  const DescriptorFile img2 = embed_manifest(model, manifest, "image", "train");
  REQUIRE(img1.entries.size() == 24);
  for (size_t i = 0; i < img1.entries.size(); ++i) {
    double norm = 0.0;
    for (long d = 0; d < img1.dim; ++d) {
      CHECK(img1.entries[i].descriptor[d] == img2.entries[i].descriptor[d]);
      norm += img1.entries[i].descriptor[d] * img1.entries[i].descriptor[d];
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Descriptor files round-trip and reload into an evaluation.
  const std::string desc_path = run_dir + "/img.desc";
  write_descriptors(desc_path, img1);
  const DescriptorFile back = read_descriptors(desc_path);
  CHECK(back.modality == "image");
  CHECK(back.dim == img1.dim);
  REQUIRE(back.entries.size() == img1.entries.size());
  for (size_t i = 0; i < back.entries.size(); ++i) {
    CHECK(back.entries[i].id == img1.entries[i].id);
    for (long d = 0; d < back.dim; ++d) {
      CHECK(back.entries[i].descriptor[d] == img1.entries[i].descriptor[d]);
    }
  }

  // Self-retrieval sanity: image queries against the image database.
  const EvalReport self = evaluate_retrieval(back, back, "2d_to_2d", 0.0);
  CHECK(self.recall[0] == doctest::Approx(100.0));
  for (size_t k = 1; k < self.recall.size(); ++k) CHECK(self.recall[k] >= self.recall[k - 1]);

  const std::string report_path = run_dir + "/report.txt";
  write_report(report_path, self);
  const std::string report = file_bytes(report_path);
  CHECK(report.find("k,recall") != std::string::npos);
  CHECK(report.find("1pct,") != std::string::npos);
}

TEST_CASE("train aborts with a diagnostic on non-finite loss") {
  RunConfig cfg = tiny_config();
  const std::string data_dir = temp_dir("nan_data");
  PrepareSynthOptions opt;
  opt.n_places = 24;
  opt.seed = 6;
  const std::string manifest_path = prepare_synthetic(cfg, opt, data_dir);

  const std::string run_dir = temp_dir("nan_warm");
  TrainOptions topt;
  topt.manifest_path = manifest_path;
  topt.out_dir = run_dir;
  topt.quiet = true;
  train_model(cfg, topt);

  // Poison a weight so the very next forward produces NaN descriptors.
  Checkpoint ckpt = load_checkpoint(run_dir + "/checkpoint_final.bin");
  for (auto& [name, tensor] : ckpt.tensors) {
    if (name == "image.vlad.fc") {
      for (long i = 0; i < tensor.numel(); ++i) {
        tensor[i] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  const std::string poisoned = run_dir + "/poisoned.bin";
  save_checkpoint(poisoned, ckpt);

  RunConfig cfg2 = cfg;
  cfg2.epochs = 2;
  TrainOptions bad;
  bad.manifest_path = manifest_path;
  bad.out_dir = temp_dir("nan_run");
  bad.resume_checkpoint = poisoned;
  bad.quiet = true;
  try {
    train_model(cfg2, bad);
    FAIL("expected non-finite loss abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
    CHECK(std::string(e.what()).find("query id") != std::string::npos);
  }
  CHECK(fs::exists(bad.out_dir + "/diagnostic.json"));
}

TEST_CASE("split optimizer partitions parameters by branch") {
  RunConfig cfg = tiny_config();
  cfg.optimizer = "split";
  cfg.epochs = 1;
  const std::string data_dir = temp_dir("split_data");
  PrepareSynthOptions opt;
  opt.n_places = 24;
  opt.seed = 8;
  const std::string manifest_path = prepare_synthetic(cfg, opt, data_dir);
  TrainOptions topt;
  topt.manifest_path = manifest_path;
  topt.out_dir = temp_dir("split_run");
  topt.quiet = true;
  const auto logs = train_model(cfg, topt);
  CHECK(logs.size() == 1);
  CHECK(std::isfinite(logs[0].total));
}
