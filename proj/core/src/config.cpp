#include "panoloc/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace panoloc {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json to_json(const RunConfig& c) {
  json j;
  j["backbone"] = c.backbone;
  j["attention"] = c.attention;
  j["clusters"] = c.clusters;
  j["descriptor_dim"] = c.descriptor_dim;
  j["se_reduction"] = c.se_reduction;
  j["image_widths"] = c.image_widths;
  j["point_widths"] = c.point_widths;
  j["image_h"] = c.image_h;
  j["image_w"] = c.image_w;
  j["num_points"] = c.num_points;
  j["margin"] = c.margin;
  j["n_neg"] = c.n_neg;
  j["mu"] = c.mu;
  j["lambda"] = c.lambda;
  j["nu"] = c.nu;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = c.optimizer;
  j["lr_decay"] = c.lr_decay;
  j["lr_decay_every"] = c.lr_decay_every;
  j["seed"] = c.seed;
  j["resample_positives"] = c.resample_positives;
  j["augment"] = c.augment;
  j["data_root"] = c.data_root;
  j["submap_radius"] = c.submap_radius;
  j["voxel_size"] = c.voxel_size;
  j["query_spacing"] = c.query_spacing;
  j["pos_radius"] = c.pos_radius;
  j["neg_radius"] = c.neg_radius;
  j["aug_brightness"] = c.aug_brightness;
  j["aug_contrast"] = c.aug_contrast;
  j["aug_yaw_deg"] = c.aug_yaw_deg;
  j["aug_noise"] = c.aug_noise;
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  read_field(j, "backbone", c.backbone);
  read_field(j, "attention", c.attention);
  read_field(j, "clusters", c.clusters);
  read_field(j, "descriptor_dim", c.descriptor_dim);
  read_field(j, "se_reduction", c.se_reduction);
  read_field(j, "image_widths", c.image_widths);
  read_field(j, "point_widths", c.point_widths);
  read_field(j, "image_h", c.image_h);
  read_field(j, "image_w", c.image_w);
  read_field(j, "num_points", c.num_points);
  read_field(j, "margin", c.margin);
  read_field(j, "n_neg", c.n_neg);
  read_field(j, "mu", c.mu);
  read_field(j, "lambda", c.lambda);
  read_field(j, "nu", c.nu);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "epochs", c.epochs);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "optimizer", c.optimizer);
  read_field(j, "lr_decay", c.lr_decay);
  read_field(j, "lr_decay_every", c.lr_decay_every);
  read_field(j, "seed", c.seed);
  read_field(j, "resample_positives", c.resample_positives);
  read_field(j, "augment", c.augment);
  read_field(j, "data_root", c.data_root);
  read_field(j, "submap_radius", c.submap_radius);
  read_field(j, "voxel_size", c.voxel_size);
  read_field(j, "query_spacing", c.query_spacing);
  read_field(j, "pos_radius", c.pos_radius);
  read_field(j, "neg_radius", c.neg_radius);
  read_field(j, "aug_brightness", c.aug_brightness);
  read_field(j, "aug_contrast", c.aug_contrast);
  read_field(j, "aug_yaw_deg", c.aug_yaw_deg);
  read_field(j, "aug_noise", c.aug_noise);
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (backbone != "spherical" && backbone != "planar") {
    throw std::invalid_argument("config: backbone must be 'spherical' or 'planar'");
  }
  if (optimizer != "adam" && optimizer != "sgd" && optimizer != "split") {
    throw std::invalid_argument("config: optimizer must be 'adam', 'sgd' or 'split'");
  }
  if (image_w != 2 * image_h) throw std::invalid_argument("config: image_w must equal 2*image_h");
  if (image_h % 32 != 0) throw std::invalid_argument("config: image_h must be divisible by 32");
  if (image_widths.size() != 4) throw std::invalid_argument("config: image_widths needs 4 stages");
  if (point_widths.empty()) throw std::invalid_argument("config: point_widths empty");
  if (clusters < 1 || descriptor_dim < 1) throw std::invalid_argument("config: K and D must be >= 1");
  if (margin <= 0.0) throw std::invalid_argument("config: margin must be positive");
  if (n_neg < 1) throw std::invalid_argument("config: n_neg must be >= 1");
  if (num_points < 1) throw std::invalid_argument("config: num_points must be >= 1");
  if (image_widths.back() % se_reduction != 0 || point_widths.back() % se_reduction != 0) {
    throw std::invalid_argument("config: se_reduction must divide both branch channel counts");
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_config: " + path + ": " + e.what());
  }
  RunConfig c = from_json(j);
  c.validate();
  return c;
}

void save_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  out << to_json(cfg).dump(2) << '\n';
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(); }

RunConfig config_from_json(const std::string& json_text) {
  return from_json(json::parse(json_text));
}

std::string resolve_data_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("PANOLOC_DATA_ROOT"); env && *env) return env;
  return cfg.data_root;
}

}  // namespace panoloc
