#pragma once

#include <string>

#include "rff/optim.hpp"

namespace rff::nn {

// Parameter snapshot, little-endian:
//   "UWBP" | u16 version=1 | u32 num_tensors | per tensor:
//   u16 name_len | name UTF-8 | u8 ndim | u32 dims... | f32 data
// Values are quantized to f32; save(load(save(x))) is byte-identical.
void save_checkpoint(const ParamSet& params, const std::string& path);

// Loads into an existing set: every stored tensor must match a parameter by
// name and shape, and every parameter must be present.
void load_checkpoint(ParamSet& params, const std::string& path);

}  // namespace rff::nn
