#include "panoloc/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "panoloc/image_io.hpp"
#include "panoloc/rng.hpp"

namespace panoloc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

std::string Manifest::resolve(const std::string& path) const {
  if (path.empty() || path.front() == '/') return path;
  return root.empty() ? path : root + "/" + path;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_manifest: " + path + ": " + e.what());
  }
  Manifest m;
  m.version = j.value("version", 1);
  m.seed = j.value("seed", std::uint64_t(0));
  m.submap_radius = j.value("submap_radius", 30.0);
  if (j.contains("channel_mean")) {
    for (int c = 0; c < 3; ++c) m.channel_mean[c] = j["channel_mean"][c].get<double>();
  }
  if (j.contains("channel_std")) {
    for (int c = 0; c < 3; ++c) m.channel_std[c] = j["channel_std"][c].get<double>();
  }
  for (const auto& s : j.at("samples")) {
    ManifestSample sample;
    sample.id = s.at("id").get<long>();
    sample.position = {s.at("position")[0].get<double>(), s.at("position")[1].get<double>(),
                       s.at("position")[2].get<double>()};
    sample.heading = s.value("heading", 0.0);
    sample.image_path = s.value("image", "");
    sample.submap_path = s.value("submap", "");
    sample.split = s.value("split", "train");
    m.samples.push_back(std::move(sample));
  }
  m.root = fs::path(path).parent_path().string();
  return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
  json j;
  j["version"] = manifest.version;
  j["seed"] = manifest.seed;
  j["submap_radius"] = manifest.submap_radius;
  j["channel_mean"] = manifest.channel_mean;
  j["channel_std"] = manifest.channel_std;
  json samples = json::array();
  for (const ManifestSample& s : manifest.samples) {
    json e;
    e["id"] = s.id;
    e["position"] = {s.position.x(), s.position.y(), s.position.z()};
    e["heading"] = s.heading;
    e["image"] = s.image_path;
    e["submap"] = s.submap_path;
    e["split"] = s.split;
    samples.push_back(std::move(e));
  }
  j["samples"] = std::move(samples);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  out << j.dump(2) << '\n';
}

Tensor standardize_image(const Tensor& image, const Manifest& manifest) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("standardize_image: expected 3 x H x W image");
  }
  Tensor out(image.shape());
  const long plane = image.dim(1) * image.dim(2);
  for (long c = 0; c < 3; ++c) {
    const double mean = manifest.channel_mean[static_cast<size_t>(c)];
    const double inv_std = 1.0 / manifest.channel_std[static_cast<size_t>(c)];
    const double* src = image.data() + c * plane;
    double* dst = out.data() + c * plane;
    for (long i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * inv_std;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CrossModalModel

CrossModalModel::CrossModalModel(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  ImageBranchConfig ic;
  ic.input_h = cfg.image_h;
  ic.input_w = cfg.image_w;
  ic.widths = cfg.image_widths;
  ic.spherical = cfg.spherical();
  ic.attention = cfg.attention;
  ic.se_reduction = cfg.se_reduction;
  ic.clusters = cfg.clusters;
  ic.descriptor_dim = cfg.descriptor_dim;
  image_ = std::make_unique<ImageBranch>(ic);

  PointBranchConfig pc;
  pc.num_points = cfg.num_points;
  pc.widths = cfg.point_widths;
  pc.attention = cfg.attention;
  pc.se_reduction = cfg.se_reduction;
  pc.clusters = cfg.clusters;
  pc.descriptor_dim = cfg.descriptor_dim;
  pc.radius_scale = cfg.submap_radius;
  point_ = std::make_unique<PointBranch>(pc);
}

void CrossModalModel::init(std::uint64_t seed) {
  std::mt19937_64 rng_img = make_rng(seed, 0x1A6);
  std::mt19937_64 rng_pt = make_rng(seed, 0x90F);
  image_->init(rng_img);
  point_->init(rng_pt);
}

void CrossModalModel::set_training(bool t) {
  image_->set_training(t);
  point_->set_training(t);
}

std::vector<TensorRef> CrossModalModel::state() {
  std::vector<TensorRef> refs;
  image_->collect_state("image.", refs);
  point_->collect_state("point.", refs);
  return refs;
}

std::vector<TensorRef> CrossModalModel::parameters() {
  std::vector<TensorRef> refs = state(), params;
  for (auto& r : refs)
    if (r.grad) params.push_back(r);
  return params;
}

Checkpoint CrossModalModel::to_checkpoint(long epoch) const {
  Checkpoint ckpt;
  json meta;
  meta["version"] = kCheckpointVersion;
  meta["epoch"] = epoch;
  meta["config"] = json::parse(config_to_json(cfg_));
  ckpt.meta_json = meta.dump();
  auto* self = const_cast<CrossModalModel*>(this);
  for (const TensorRef& r : self->state()) ckpt.tensors.emplace(r.name, *r.value);
  return ckpt;
}

RunConfig CrossModalModel::config_from_checkpoint(const Checkpoint& ckpt) {
  const json meta = json::parse(ckpt.meta_json);
  if (!meta.contains("config")) {
    throw std::runtime_error("checkpoint: metadata carries no config");
  }
  RunConfig cfg = config_from_json(meta.at("config").dump());
  cfg.validate();
  return cfg;
}

long CrossModalModel::epoch_from_checkpoint(const Checkpoint& ckpt) {
  return json::parse(ckpt.meta_json).value("epoch", -1L);
}

void CrossModalModel::load_weights(const Checkpoint& ckpt) {
  const RunConfig other = config_from_checkpoint(ckpt);
  auto mismatch = [](const std::string& field) {
    throw std::runtime_error("checkpoint: config mismatch on " + field +
                             " (rebuild the model with the checkpoint's config)");
  };
  if (other.backbone != cfg_.backbone) mismatch("backbone");
  if (other.attention != cfg_.attention) mismatch("attention");
  if (other.clusters != cfg_.clusters) mismatch("clusters (K)");
  if (other.descriptor_dim != cfg_.descriptor_dim) mismatch("descriptor_dim (D)");
  if (other.se_reduction != cfg_.se_reduction) mismatch("se_reduction (r)");
  if (other.image_widths != cfg_.image_widths) mismatch("image_widths");
  if (other.point_widths != cfg_.point_widths) mismatch("point_widths");
  if (other.image_h != cfg_.image_h || other.image_w != cfg_.image_w) mismatch("image resolution");
  if (other.num_points != cfg_.num_points) mismatch("num_points (N_d)");

  for (TensorRef& r : state()) {
    const auto it = ckpt.tensors.find(r.name);
    if (it == ckpt.tensors.end()) {
      throw std::runtime_error("checkpoint: missing tensor " + r.name);
    }
    if (it->second.shape() != r.value->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + r.name);
    }
    *r.value = it->second;
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct LoadedItem {
  ManifestSample info;
  Tensor image;  // raw [0,1]
  std::vector<Eigen::Vector3d> points;
};

Tensor load_image_batch(const std::vector<const LoadedItem*>& members, const Manifest& manifest,
                        const RunConfig& cfg, bool augment, std::uint64_t epoch_seed) {
  const long B = static_cast<long>(members.size());
  const long H = cfg.image_h, W = cfg.image_w;
  Tensor batch({B, 3, H, W});
  for (long b = 0; b < B; ++b) {
    Tensor img = members[static_cast<size_t>(b)]->image;
    if (augment) {
      AugmentParams ap;
      ap.brightness = cfg.aug_brightness;
      ap.contrast = cfg.aug_contrast;
      ap.yaw_deg = cfg.aug_yaw_deg;
      ap.noise_std = cfg.aug_noise;
      img = augment_image(img, ap,
                          mix_seed(epoch_seed, static_cast<std::uint64_t>(
                                                   members[static_cast<size_t>(b)]->info.id) *
                                                       8 +
                                               static_cast<std::uint64_t>(b)));
    }
    img = standardize_image(img, manifest);
    if (img.dim(1) != H || img.dim(2) != W) {
      throw std::runtime_error("train: image " + members[static_cast<size_t>(b)]->info.image_path +
                               " has resolution " + img.shape_str() + ", config expects " +
                               std::to_string(H) + "x" + std::to_string(W));
    }
    std::copy(img.data(), img.data() + img.numel(), batch.data() + b * img.numel());
  }
  return batch;
}

Tensor load_point_batch(const std::vector<const LoadedItem*>& members, const RunConfig& cfg,
                        std::uint64_t epoch_seed) {
  const long B = static_cast<long>(members.size());
  const long N = cfg.num_points;
  Tensor batch({B, N, 3});
  for (long b = 0; b < B; ++b) {
    const auto pts = subsample_points(
        members[static_cast<size_t>(b)]->points, N,
        mix_seed(epoch_seed,
                 static_cast<std::uint64_t>(members[static_cast<size_t>(b)]->info.id) * 8 +
                     static_cast<std::uint64_t>(b) + 4));
    for (long n = 0; n < N; ++n) {
      batch(b, n, 0) = pts[static_cast<size_t>(n)].x();
      batch(b, n, 1) = pts[static_cast<size_t>(n)].y();
      batch(b, n, 2) = pts[static_cast<size_t>(n)].z();
    }
  }
  return batch;
}

Tensor descriptor_row(const Tensor& batch, long row) {
  const long D = batch.dim(1);
  Tensor t({D});
  for (long d = 0; d < D; ++d) t[d] = batch(row, d);
  return t;
}

void add_descriptor_grad(Tensor& grads, long row, const Tensor& g) {
  const long D = grads.dim(1);
  for (long d = 0; d < D; ++d) grads(row, d) += g[d];
}

void write_loss_log(const std::string& path, const std::vector<EpochLog>& logs) {
  std::ofstream out(path);
  out << "epoch,cross_modal,same_modal,anchor,total,tuples\n";
  char buf[160];
  for (const EpochLog& l : logs) {
    std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g,%.10g,%ld\n", l.epoch, l.cross_modal,
                  l.same_modal, l.anchor, l.total, l.tuples);
    out << buf;
  }
}

}  // namespace

std::vector<EpochLog> train_model(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  fs::create_directories(options.out_dir);
  Manifest manifest = load_manifest(options.manifest_path);

  std::vector<LoadedItem> items;
  for (const ManifestSample& s : manifest.samples) {
    if (s.split != "train") continue;
    LoadedItem item;
    item.info = s;
    item.image = read_png(manifest.resolve(s.image_path));
    item.points = read_scan_bin(manifest.resolve(s.submap_path));
    if (item.points.empty()) {
      throw std::runtime_error("train: sub-map " + s.submap_path + " is empty");
    }
    items.push_back(std::move(item));
  }
  if (items.size() < 3) {
    throw std::runtime_error("train: need at least 3 training samples, found " +
                             std::to_string(items.size()));
  }
  std::vector<Eigen::Vector3d> positions;
  positions.reserve(items.size());
  for (const auto& it : items) positions.push_back(it.info.position);

  CrossModalModel model(cfg);

  // Optimizers, possibly split per branch.
  auto make_kind = [](const std::string& name) {
    return name == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  };
  struct Scope {
    std::string name;
    Optimizer optim;
    std::vector<TensorRef> params;
  };
  std::vector<Scope> scopes;
  if (cfg.optimizer == "split") {
    scopes.push_back({"image", Optimizer(OptimizerKind::kSgd, cfg.learning_rate), {}});
    scopes.push_back({"point", Optimizer(OptimizerKind::kAdam, cfg.learning_rate), {}});
    for (TensorRef& r : model.parameters()) {
      (r.name.rfind("image.", 0) == 0 ? scopes[0] : scopes[1]).params.push_back(r);
    }
  } else {
    scopes.push_back({"main", Optimizer(make_kind(cfg.optimizer), cfg.learning_rate), {}});
    scopes[0].params = model.parameters();
  }

  long start_epoch = 0;
  if (!options.resume_checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(options.resume_checkpoint);
    model.load_weights(ckpt);
    const json meta = json::parse(ckpt.meta_json);
    start_epoch = meta.value("epoch", -1L) + 1;
    if (meta.contains("optim")) {
      for (Scope& sc : scopes) {
        if (meta["optim"]["steps"].contains(sc.name)) {
          sc.optim.set_step_count(meta["optim"]["steps"][sc.name].get<long>());
        }
        const std::string prefix = "optim." + sc.name + ".";
        for (const auto& [name, tensor] : ckpt.tensors) {
          if (name.rfind(prefix, 0) == 0) {
            sc.optim.slots()[name.substr(prefix.size())] = tensor;
          }
        }
      }
    }
  } else {
    model.init(cfg.seed);
  }

  model.set_training(true);
  LossWeights weights{cfg.mu, cfg.lambda, cfg.nu, cfg.margin};

  const auto save = [&](long epoch, const std::string& name) {
    Checkpoint ckpt = model.to_checkpoint(epoch);
    json meta = json::parse(ckpt.meta_json);
    json steps;
    for (Scope& sc : scopes) {
      steps[sc.name] = sc.optim.step_count();
      for (const auto& [slot, tensor] : sc.optim.slots()) {
        ckpt.tensors.emplace("optim." + sc.name + "." + slot, tensor);
      }
    }
    meta["optim"] = {{"kind", cfg.optimizer}, {"steps", steps}};
    ckpt.meta_json = meta.dump();
    save_checkpoint(options.out_dir + "/" + name, ckpt);
  };

  std::vector<EpochLog> logs;
  double lr = cfg.learning_rate;
  for (long epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    MiningParams mp;
    mp.spacing = cfg.query_spacing;
    mp.pos_radius = cfg.pos_radius;
    mp.neg_radius = cfg.neg_radius;
    mp.n_neg = cfg.n_neg;
    mp.seed = cfg.resample_positives ? mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch))
                                     : mix_seed(cfg.seed, 1000);
    MiningResult mined = mine_training_tuples(positions, mp);
    if (mined.tuples.empty()) {
      throw std::runtime_error("train: no usable training tuples (positives within " +
                               std::to_string(cfg.pos_radius) + " m and " +
                               std::to_string(cfg.n_neg) + " negatives beyond " +
                               std::to_string(cfg.neg_radius) + " m required)");
    }
    std::mt19937_64 order_rng = make_rng(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch));
    std::shuffle(mined.tuples.begin(), mined.tuples.end(), order_rng);
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(epoch));

    EpochLog log;
    log.epoch = epoch;
    for (size_t batch_start = 0; batch_start < mined.tuples.size();
         batch_start += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_end =
          std::min(mined.tuples.size(), batch_start + static_cast<size_t>(cfg.batch_size));
      for (size_t t = batch_start; t < batch_end; ++t) {
        const TrainingTupleIdx& tuple = mined.tuples[t];
        std::vector<const LoadedItem*> members;
        members.push_back(&items[tuple.query]);
        members.push_back(&items[tuple.positive]);
        for (size_t n : tuple.negatives) members.push_back(&items[n]);

        const Tensor img_batch = load_image_batch(
            members, manifest, cfg, cfg.augment, mix_seed(epoch_seed, 2 * t));
        const Tensor pt_batch = load_point_batch(members, cfg, mix_seed(epoch_seed, 2 * t + 1));

        const Tensor img_desc = model.image().forward(img_batch);
        const Tensor pt_desc = model.point().forward(pt_batch);

        DescriptorTuple dt;
        dt.image_anchor = descriptor_row(img_desc, 0);
        dt.image_positive = descriptor_row(img_desc, 1);
        dt.point_anchor = descriptor_row(pt_desc, 0);
        dt.point_positive = descriptor_row(pt_desc, 1);
        for (size_t n = 0; n < tuple.negatives.size(); ++n) {
          dt.image_negatives.push_back(descriptor_row(img_desc, 2 + static_cast<long>(n)));
          dt.point_negatives.push_back(descriptor_row(pt_desc, 2 + static_cast<long>(n)));
        }

        TupleGrads tg = TupleGrads::zeros_like(dt);
        const LossBreakdown lb = total_loss(dt, weights, &tg);
        if (!std::isfinite(lb.total)) {
          json diag;
          diag["epoch"] = epoch;
          diag["batch"] = batch_start / static_cast<size_t>(cfg.batch_size);
          diag["query_id"] = items[tuple.query].info.id;
          diag["loss"] = {{"cross_modal", lb.cross_modal},
                          {"same_modal", lb.same_modal},
                          {"anchor", lb.anchor}};
          std::ofstream dump(options.out_dir + "/diagnostic.json");
          dump << diag.dump(2) << '\n';
          throw std::runtime_error(
              "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch_start / static_cast<size_t>(cfg.batch_size)) + ", query id " +
              std::to_string(items[tuple.query].info.id) + " (see diagnostic.json)");
        }

        Tensor dimg({img_desc.dim(0), img_desc.dim(1)});
        Tensor dpt({pt_desc.dim(0), pt_desc.dim(1)});
        add_descriptor_grad(dimg, 0, tg.image_anchor);
        add_descriptor_grad(dimg, 1, tg.image_positive);
        add_descriptor_grad(dpt, 0, tg.point_anchor);
        add_descriptor_grad(dpt, 1, tg.point_positive);
        for (size_t n = 0; n < tuple.negatives.size(); ++n) {
          add_descriptor_grad(dimg, 2 + static_cast<long>(n), tg.image_negatives[n]);
          add_descriptor_grad(dpt, 2 + static_cast<long>(n), tg.point_negatives[n]);
        }
        model.image().backward(dimg);
        model.point().backward(dpt);

        log.cross_modal += lb.cross_modal;
        log.same_modal += lb.same_modal;
        log.anchor += lb.anchor;
        log.total += lb.total;
        ++log.tuples;
      }
      const double scale = 1.0 / static_cast<double>(batch_end - batch_start);
      for (Scope& sc : scopes) {
        sc.optim.set_learning_rate(lr);
        sc.optim.step(sc.params, scale);
      }
      for (Scope& sc : scopes) {
        for (TensorRef& r : sc.params) r.grad->zero();
      }
    }

    log.cross_modal /= static_cast<double>(log.tuples);
    log.same_modal /= static_cast<double>(log.tuples);
    log.anchor /= static_cast<double>(log.tuples);
    log.total /= static_cast<double>(log.tuples);
    logs.push_back(log);
    if (!options.quiet) {
      std::printf("epoch %3ld  total %.6f  cm %.6f  sm %.6f  anchor %.6f  (%ld tuples)\n",
                  log.epoch, log.total, log.cross_modal, log.same_modal, log.anchor, log.tuples);
      std::fflush(stdout);
    }
    write_loss_log(options.out_dir + "/loss_log.csv", logs);
    save(epoch, "checkpoint_latest.bin");
    if (options.keep_epoch_checkpoints) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_e%03ld.bin", epoch);
      save(epoch, name);
    }
    if (cfg.lr_decay_every > 0 && (epoch + 1) % cfg.lr_decay_every == 0) lr *= cfg.lr_decay;
  }
  if (!logs.empty()) save(logs.back().epoch, "checkpoint_final.bin");
  return logs;
}

// ---------------------------------------------------------------------------
// Descriptor files

void write_descriptors(const std::string& path, const DescriptorFile& file) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_descriptors: cannot open " + path);
  out << "# panoloc descriptors v1\n";
  out << "# modality=" << file.modality << " dim=" << file.dim << " count=" << file.entries.size()
      << "\n";
  char buf[64];
  for (const DbEntry& e : file.entries) {
    out << e.id;
    const double pos[3] = {e.position.x(), e.position.y(), e.position.z()};
    for (double v : pos) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out << buf;
    }
    for (long d = 0; d < e.descriptor.numel(); ++d) {
      std::snprintf(buf, sizeof(buf), ",%.17g", e.descriptor[d]);
      out << buf;
    }
    out << '\n';
  }
}

DescriptorFile read_descriptors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_descriptors: cannot open " + path);
  DescriptorFile file;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# panoloc descriptors", 0) != 0) {
    throw std::runtime_error("read_descriptors: " + path + " is not a descriptor file");
  }
  if (!std::getline(in, line)) throw std::runtime_error("read_descriptors: truncated header");
  {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind("modality=", 0) == 0) file.modality = tok.substr(9);
      if (tok.rfind("dim=", 0) == 0) file.dim = std::stol(tok.substr(4));
    }
  }
  if (file.dim <= 0) throw std::runtime_error("read_descriptors: missing descriptor dimension");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    DbEntry e;
    std::getline(ss, field, ',');
    e.id = std::stol(field);
    for (int i = 0; i < 3; ++i) {
      std::getline(ss, field, ',');
      e.position[i] = std::stod(field);
    }
    e.descriptor.resize({file.dim});
    for (long d = 0; d < file.dim; ++d) {
      if (!std::getline(ss, field, ',')) {
        throw std::runtime_error("read_descriptors: short row for id " + std::to_string(e.id));
      }
      e.descriptor[d] = std::stod(field);
    }
    file.entries.push_back(std::move(e));
  }
  return file;
}

DescriptorFile embed_manifest(CrossModalModel& model, const Manifest& manifest,
                              const std::string& modality, const std::string& split_filter) {
  if (modality != "image" && modality != "points") {
    throw std::invalid_argument("embed_manifest: modality must be 'image' or 'points'");
  }
  model.set_training(false);
  const RunConfig& cfg = model.config();
  DescriptorFile file;
  file.modality = modality;
  file.dim = cfg.descriptor_dim;

  for (const ManifestSample& s : manifest.samples) {
    if (!split_filter.empty() && s.split != split_filter) continue;
    Tensor desc;
    if (modality == "image") {
      if (s.image_path.empty()) continue;
      Tensor img = standardize_image(read_png(manifest.resolve(s.image_path)), manifest);
      Tensor batch({1, 3, img.dim(1), img.dim(2)});
      std::copy(img.data(), img.data() + img.numel(), batch.data());
      desc = model.image().forward(batch);
    } else {
      if (s.submap_path.empty()) continue;
      const auto points = read_scan_bin(manifest.resolve(s.submap_path));
      if (points.empty()) {
        throw std::runtime_error("embed_manifest: empty sub-map for id " + std::to_string(s.id));
      }
      const auto sel = subsample_points(points, cfg.num_points,
                                        mix_seed(manifest.seed, static_cast<std::uint64_t>(s.id)));
      Tensor batch({1, cfg.num_points, 3});
      for (long n = 0; n < cfg.num_points; ++n) {
        batch(0, n, 0) = sel[static_cast<size_t>(n)].x();
        batch(0, n, 1) = sel[static_cast<size_t>(n)].y();
        batch(0, n, 2) = sel[static_cast<size_t>(n)].z();
      }
      desc = model.point().forward(batch);
    }
    DbEntry e;
    e.id = s.id;
    e.position = s.position;
    e.descriptor.resize({file.dim});
    for (long d = 0; d < file.dim; ++d) e.descriptor[d] = desc(0, d);
    file.entries.push_back(std::move(e));
  }
  if (file.entries.empty()) {
    throw std::runtime_error("embed_manifest: no samples matched modality '" + modality +
                             "' and split '" + split_filter + "'");
  }
  return file;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_retrieval(const DescriptorFile& queries, const DescriptorFile& database,
                              const std::string& direction, double query_spacing,
                              double same_place, long max_k) {
  RetrievalDatabase db(database.entries);
  std::vector<Eigen::Vector3d> all_positions;
  for (const DbEntry& e : queries.entries) all_positions.push_back(e.position);
  const std::vector<size_t> selected = select_eval_queries(all_positions, query_spacing);

  EvalReport report;
  report.direction = direction;
  report.db_size = db.size();
  report.n_queries = selected.size();
  report.k_1pct = one_percent_k(db.size());
  const long k_max = std::min<long>(max_k, static_cast<long>(db.size()));
  const long k_fetch = std::min<long>(static_cast<long>(db.size()),
                                      std::max<long>(k_max, report.k_1pct));

  std::vector<std::vector<RankedMatch>> results;
  std::vector<Eigen::Vector3d> query_positions;
  for (size_t idx : selected) {
    results.push_back(db.query_topk(queries.entries[idx].descriptor, k_fetch));
    query_positions.push_back(queries.entries[idx].position);
  }
  for (long k = 1; k <= k_max; ++k) {
    report.recall.push_back(recall_at_k(results, query_positions, db, k, same_place));
  }
  report.recall_1pct = recall_at_k(results, query_positions, db, report.k_1pct, same_place);
  return report;
}

void write_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report: cannot open " + path);
  out << "retrieval report\n";
  out << "direction:   " << report.direction << "\n";
  out << "queries:     " << report.n_queries << "\n";
  out << "database:    " << report.db_size << "\n";
  out << "k at 1%:     " << report.k_1pct << "\n\n";
  out << "    k   recall\n";
  char buf[64];
  for (size_t i = 0; i < report.recall.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%5zu   %6.2f\n", i + 1, report.recall[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "   1%%   %6.2f\n\n", report.recall_1pct);
  out << buf;
  out << "k,recall\n";
  for (size_t i = 0; i < report.recall.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i + 1, report.recall[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "1pct,%.6f\n", report.recall_1pct);
  out << buf;
}

// ---------------------------------------------------------------------------
// Dataset preparation

namespace {

void compute_channel_stats(const std::vector<const Tensor*>& images, Manifest& manifest) {
  double mean[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  long count = 0;
  for (const Tensor* img : images) {
    const long plane = img->dim(1) * img->dim(2);
    for (long c = 0; c < 3; ++c) {
      const double* p = img->data() + c * plane;
      for (long i = 0; i < plane; ++i) {
        mean[c] += p[i];
        sq[c] += p[i] * p[i];
      }
    }
    count += img->dim(1) * img->dim(2);
  }
  for (int c = 0; c < 3; ++c) {
    const double m = mean[c] / static_cast<double>(count);
    double var = sq[c] / static_cast<double>(count) - m * m;
    if (var < 1e-8) var = 1e-8;
    manifest.channel_mean[static_cast<size_t>(c)] = m;
    manifest.channel_std[static_cast<size_t>(c)] = std::sqrt(var);
  }
}

std::string frame_name(long id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06ld", id);
  return buf;
}

}  // namespace

std::string prepare_synthetic(const RunConfig& cfg, const PrepareSynthOptions& options,
                              const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir + "/images");
  fs::create_directories(out_dir + "/submaps");

  SynthParams sp;
  sp.image_h = cfg.image_h;
  sp.submap_radius = cfg.submap_radius;
  SynthWorld world(options.seed, options.n_places, sp);

  Manifest manifest;
  manifest.seed = options.seed;
  manifest.submap_radius = cfg.submap_radius;

  GroundRemovalParams gp;
  gp.seed = mix_seed(options.seed, 0x6E0);

  std::vector<Tensor> train_images;
  auto emit = [&](long id, const Pose& pose, const std::string& split) {
    const Tensor image = world.render(pose);
    Submap submap;
    submap.id = id;
    submap.position = pose.position;
    submap.heading = pose.heading();
    submap.points =
        world.sample_submap_local(pose, mix_seed(options.seed, 0x50B + static_cast<size_t>(id)));
    const Submap cleaned = remove_ground(submap, gp);
    if (cleaned.points.empty()) {
      throw std::runtime_error("prepare_synthetic: place " + std::to_string(id) +
                               " has no structure above the ground; increase scene density");
    }
    const std::string img_rel = "images/" + frame_name(id) + ".png";
    const std::string sub_rel = "submaps/" + frame_name(id) + ".bin";
    write_png(out_dir + "/" + img_rel, image);
    write_scan_bin(out_dir + "/" + sub_rel, cleaned.points);

    ManifestSample s;
    s.id = id;
    s.position = pose.position;
    s.heading = pose.heading();
    s.image_path = img_rel;
    s.submap_path = sub_rel;
    s.split = split;
    manifest.samples.push_back(std::move(s));
    if (split == "train") train_images.push_back(image);
  };

  for (size_t i = 0; i < world.places().size(); ++i) {
    emit(static_cast<long>(i), world.places()[i], "train");
  }
  for (long h = 0; h < options.heldout; ++h) {
    const size_t place =
        static_cast<size_t>((h * options.n_places) / std::max<long>(1, options.heldout));
    const Pose pose = world.perturbed_place(place, options.heldout_offset,
                                            mix_seed(options.seed, 0xE0 + static_cast<size_t>(h)));
    emit(1000000 + h, pose, "heldout");
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : train_images) ptrs.push_back(&t);
  compute_channel_stats(ptrs, manifest);

  const std::string manifest_path = out_dir + "/manifest.json";
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

std::string prepare_sequence(const RunConfig& cfg, const std::string& seq_dir,
                             const std::string& out_dir) {
  cfg.validate();
  const std::string poses_path = seq_dir + "/poses.txt";
  if (!fs::exists(poses_path)) {
    throw std::runtime_error("prepare_sequence: missing pose file " + poses_path);
  }
  const std::vector<Pose> poses = load_poses(poses_path);
  if (poses.empty()) throw std::runtime_error("prepare_sequence: no poses in " + poses_path);

  std::vector<std::vector<Eigen::Vector3d>> scans;
  scans.reserve(poses.size());
  for (const Pose& p : poses) {
    const std::string scan_path = seq_dir + "/scans/" + frame_name(p.frame_id) + ".bin";
    if (!fs::exists(scan_path)) {
      throw std::runtime_error("prepare_sequence: missing scan " + scan_path);
    }
    scans.push_back(read_scan_bin(scan_path));
  }

  fs::create_directories(out_dir + "/submaps");
  const GlobalMap map = build_global_map(scans, poses, cfg.voxel_size);

  Manifest manifest;
  manifest.seed = cfg.seed;
  manifest.submap_radius = cfg.submap_radius;
  GroundRemovalParams gp;
  gp.seed = mix_seed(cfg.seed, 0x6E0);

  std::vector<Tensor> stat_images;
  for (const Pose& p : poses) {
    const Submap submap = remove_ground(cut_submap(map, p, cfg.submap_radius), gp);
    if (submap.points.empty()) continue;  // structureless location
    const std::string sub_rel = "submaps/" + frame_name(p.frame_id) + ".bin";
    write_scan_bin(out_dir + "/" + sub_rel, submap.points);

    ManifestSample s;
    s.id = p.frame_id;
    s.position = p.position;
    s.heading = p.heading();
    const std::string image_path = seq_dir + "/images/" + frame_name(p.frame_id) + ".png";
    if (!fs::exists(image_path)) {
      throw std::runtime_error("prepare_sequence: missing image " + image_path);
    }
    s.image_path = fs::absolute(image_path).string();
    s.submap_path = sub_rel;
    s.split = "train";
    manifest.samples.push_back(std::move(s));
    if (stat_images.size() < 64) stat_images.push_back(read_png(image_path));
  }
  if (manifest.samples.empty()) {
    throw std::runtime_error("prepare_sequence: no usable sub-maps were produced");
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : stat_images) ptrs.push_back(&t);
  if (!ptrs.empty()) compute_channel_stats(ptrs, manifest);

  const std::string manifest_path = out_dir + "/manifest.json";
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace panoloc
