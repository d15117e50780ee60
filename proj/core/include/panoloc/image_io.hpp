#pragma once

#include <string>

#include "panoloc/tensor.hpp"

namespace panoloc {

// 8-bit RGB PNG I/O. Tensors are 3 x H x W with values in [0, 1]; writing
// clamps and quantizes, reading scales back to [0, 1].
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

}  // namespace panoloc
