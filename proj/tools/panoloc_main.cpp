// Command-line front end: prepare-data, train, embed, eval, query, ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "panoloc/config.hpp"
#include "panoloc/image_io.hpp"
#include "panoloc/trainer.hpp"

namespace {

using namespace panoloc;

RunConfig load_or_default(const std::string& config_path) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  cfg.validate();
  return cfg;
}

CrossModalModel model_from_checkpoint_file(const std::string& path, Checkpoint* out_ckpt) {
  Checkpoint ckpt = load_checkpoint(path);
  CrossModalModel model(CrossModalModel::config_from_checkpoint(ckpt));
  model.load_weights(ckpt);
  if (out_ckpt) *out_ckpt = std::move(ckpt);
  return model;
}

int cmd_prepare_data(const std::string& config_path, bool synthetic, long n_places,
                     std::uint64_t seed, long heldout, double heldout_offset,
                     const std::string& seq_dir, const std::string& out_dir) {
  RunConfig cfg = load_or_default(config_path);
  std::string manifest;
  if (synthetic) {
    PrepareSynthOptions options;
    options.n_places = n_places;
    options.seed = seed;
    options.heldout = heldout;
    options.heldout_offset = heldout_offset;
    manifest = prepare_synthetic(cfg, options, out_dir);
  } else {
    std::string src = seq_dir;
    if (src.empty()) src = resolve_data_root(cfg);
    if (src.empty()) {
      std::cerr << "prepare-data: no sequence directory given (use --sequence, config "
                   "data_root, or PANOLOC_DATA_ROOT)\n";
      return 2;
    }
    manifest = prepare_sequence(cfg, src, out_dir);
  }
  std::cout << "wrote " << manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest,
              const std::string& out_dir, const std::string& resume, bool keep_epochs) {
  RunConfig cfg = load_or_default(config_path);
  TrainOptions options;
  options.manifest_path = manifest;
  options.out_dir = out_dir;
  options.resume_checkpoint = resume;
  options.keep_epoch_checkpoints = keep_epochs;
  const auto logs = train_model(cfg, options);
  if (!logs.empty()) {
    std::printf("final epoch %ld mean loss %.6f\n", logs.back().epoch, logs.back().total);
  }
  std::cout << "checkpoints and loss log in " << out_dir << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& manifest_path,
              const std::string& modality, const std::string& split, const std::string& out_file) {
  CrossModalModel model = model_from_checkpoint_file(checkpoint, nullptr);
  const Manifest manifest = load_manifest(manifest_path);
  const DescriptorFile file = embed_manifest(model, manifest, modality, split);
  write_descriptors(out_file, file);
  std::cout << "wrote " << file.entries.size() << " descriptors to " << out_file << "\n";
  return 0;
}

int cmd_eval(const std::string& query_file, const std::string& db_file, std::string direction,
             const std::string& out_file, double spacing, double same_place) {
  const DescriptorFile queries = read_descriptors(query_file);
  const DescriptorFile database = read_descriptors(db_file);
  if (direction.empty()) {
    const auto tag = [](const std::string& m) { return m == "image" ? "2d" : "3d"; };
    direction = std::string(tag(queries.modality)) + "_to_" + tag(database.modality);
  }
  const EvalReport report = evaluate_retrieval(queries, database, direction, spacing, same_place);
  write_report(out_file, report);
  std::printf("%s: recall@1 %.2f  recall@1%% %.2f  (%zu queries, %zu entries)\n",
              report.direction.c_str(), report.recall.empty() ? 0.0 : report.recall[0],
              report.recall_1pct, report.n_queries, report.db_size);
  std::cout << "report written to " << out_file << "\n";
  return 0;
}

int cmd_query(const std::string& checkpoint, const std::string& image_path,
              const std::string& db_file, const std::string& manifest_path, long k) {
  CrossModalModel model = model_from_checkpoint_file(checkpoint, nullptr);
  model.set_training(false);
  const Manifest manifest = load_manifest(manifest_path);
  const DescriptorFile database = read_descriptors(db_file);
  RetrievalDatabase db(database.entries);

  Tensor img = standardize_image(read_png(image_path), manifest);
  Tensor batch({1, 3, img.dim(1), img.dim(2)});
  std::copy(img.data(), img.data() + img.numel(), batch.data());
  const Tensor desc = model.image().forward(batch);
  Tensor d({desc.dim(1)});
  for (long i = 0; i < d.numel(); ++i) d[i] = desc(0, i);

  const auto matches = db.query_topk(d, std::min<long>(k, static_cast<long>(db.size())));
  std::unordered_map<long, Eigen::Vector3d> pos;
  for (const DbEntry& e : db.entries()) pos.emplace(e.id, e.position);
  std::printf("%-6s %-12s %-30s\n", "rank", "distance", "id @ position");
  for (size_t i = 0; i < matches.size(); ++i) {
    const Eigen::Vector3d& p = pos.at(matches[i].id);
    std::printf("%-6zu %-12.6f %ld @ (%.2f, %.2f, %.2f)\n", i + 1, matches[i].distance,
                matches[i].id, p.x(), p.y(), p.z());
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& manifest,
               const std::string& out_dir) {
  const RunConfig base_cfg = load_or_default(config_path);
  struct Variant {
    const char* name;
    bool spherical;
    bool attention;
  };
  const Variant variants[4] = {{"base", false, false},
                               {"scnn", true, false},
                               {"attention", false, true},
                               {"both", true, true}};

  std::filesystem::create_directories(out_dir);
  std::ostringstream table;
  table << "variant      scnn  attention  r@1(2d->3d)  r@1%(2d->3d)  r@1(3d->2d)  r@1%(3d->2d)\n";
  for (const Variant& v : variants) {
    RunConfig cfg = base_cfg;
    cfg.backbone = v.spherical ? "spherical" : "planar";
    cfg.attention = v.attention;
    const std::string dir = out_dir + "/" + v.name;

    TrainOptions options;
    options.manifest_path = manifest;
    options.out_dir = dir;
    options.quiet = true;
    train_model(cfg, options);

    Checkpoint ckpt = load_checkpoint(dir + "/checkpoint_final.bin");
    CrossModalModel model(CrossModalModel::config_from_checkpoint(ckpt));
    model.load_weights(ckpt);
    const Manifest man = load_manifest(manifest);
    const DescriptorFile img = embed_manifest(model, man, "image", "train");
    const DescriptorFile pts = embed_manifest(model, man, "points", "train");
    const EvalReport to3d = evaluate_retrieval(img, pts, "2d_to_3d");
    const EvalReport to2d = evaluate_retrieval(pts, img, "3d_to_2d");
    write_report(dir + "/eval_2d_to_3d.txt", to3d);
    write_report(dir + "/eval_3d_to_2d.txt", to2d);

    char row[160];
    std::snprintf(row, sizeof(row), "%-12s %-5s %-10s %11.2f %13.2f %12.2f %13.2f\n", v.name,
                  v.spherical ? "yes" : "no", v.attention ? "yes" : "no",
                  to3d.recall.empty() ? 0.0 : to3d.recall[0], to3d.recall_1pct,
                  to2d.recall.empty() ? 0.0 : to2d.recall[0], to2d.recall_1pct);
    table << row;
  }
  std::ofstream out(out_dir + "/ablation_table.txt");
  out << table.str();
  std::cout << table.str();
  std::cout << "table written to " << out_dir << "/ablation_table.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panoloc: cross-modal place recognition between panoramas and point-cloud maps"};
  app.require_subcommand(1);

  std::string config_path, manifest, out_dir, seq_dir, checkpoint, resume;
  std::string modality = "image", split, query_file, db_file, direction, out_file, image_path;
  bool synthetic = false, keep_epochs = false;
  long n_places = 64, heldout = 0, topk = 5;
  std::uint64_t seed = 7;
  double heldout_offset = 5.0, spacing = 10.0, same_place = 20.0;

  auto* prep = app.add_subcommand("prepare-data", "Build a dataset manifest");
  prep->add_option("--config", config_path, "JSON run configuration");
  prep->add_flag("--synthetic", synthetic, "Generate the procedural paired dataset");
  prep->add_option("--places", n_places, "Synthetic places to generate");
  prep->add_option("--seed", seed, "Generator seed");
  prep->add_option("--heldout", heldout, "Held-out perturbed renders");
  prep->add_option("--heldout-offset", heldout_offset, "Max held-out viewpoint offset (m)");
  prep->add_option("--sequence", seq_dir, "Sequence directory (poses.txt, images/, scans/)");
  prep->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train both branches");
  train->add_option("--config", config_path, "JSON run configuration");
  train->add_option("--manifest", manifest, "Dataset manifest")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--keep-epoch-checkpoints", keep_epochs, "Keep one checkpoint per epoch");

  auto* embed = app.add_subcommand("embed", "Write descriptors for manifest samples");
  embed->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  embed->add_option("--manifest", manifest, "Dataset manifest")->required();
  embed->add_option("--modality", modality, "'image' or 'points'")->required();
  embed->add_option("--split", split, "Restrict to a split (train/heldout)");
  embed->add_option("--out", out_file, "Descriptor file")->required();

  auto* eval = app.add_subcommand("eval", "Recall evaluation of query vs database descriptors");
  eval->add_option("--queries", query_file, "Query descriptor file")->required();
  eval->add_option("--database", db_file, "Database descriptor file")->required();
  eval->add_option("--direction", direction, "Report label (derived from modalities if omitted)");
  eval->add_option("--spacing", spacing, "Evaluation query spacing (m)");
  eval->add_option("--same-place", same_place, "Same-place threshold (m)");
  eval->add_option("--out", out_file, "Report file")->required();

  auto* query = app.add_subcommand("query", "Localize a single panorama against a database");
  query->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  query->add_option("--image", image_path, "Equirectangular PNG")->required();
  query->add_option("--database", db_file, "Database descriptor file")->required();
  query->add_option("--manifest", manifest, "Manifest (for normalization statistics)")->required();
  query->add_option("--topk", topk, "Matches to print");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four model variants");
  ablate->add_option("--config", config_path, "JSON run configuration");
  ablate->add_option("--manifest", manifest, "Dataset manifest")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prep->parsed()) {
      return cmd_prepare_data(config_path, synthetic, n_places, seed, heldout, heldout_offset,
                              seq_dir, out_dir);
    }
    if (train->parsed()) return cmd_train(config_path, manifest, out_dir, resume, keep_epochs);
    if (embed->parsed()) return cmd_embed(checkpoint, manifest, modality, split, out_file);
    if (eval->parsed()) {
      return cmd_eval(query_file, db_file, direction, out_file, spacing, same_place);
    }
    if (query->parsed()) return cmd_query(checkpoint, image_path, db_file, manifest, topk);
    if (ablate->parsed()) return cmd_ablate(config_path, manifest, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
