#pragma once

#include <map>
#include <string>

#include "panoloc/tensor.hpp"

namespace panoloc {

// Self-describing binary checkpoint: a JSON metadata block (config, epoch,
// format version) followed by named tensors. Tensor names follow the layer
// path scheme documented in the README ("image.backbone.stem.conv.weight",
// "point.vlad.centers", optimizer slots under "optim."). The version field is
// mandatory; loading rejects unknown versions.
struct Checkpoint {
  std::string meta_json;  // must contain a "version" field
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace panoloc
