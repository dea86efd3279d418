#pragma once

#include <map>
#include <string>
#include <vector>

#include "cola/optim.hpp"

namespace cola {

// Binary checkpoint: magic "COLA", u32 version, u32 entry count, then per
// entry {u32 name length, name bytes, u32 ndim, u32 dims[], float32 LE
// payload}. Round-trips bit-exactly.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamSet<float>& params);

// Named float32 blobs in file order.
std::vector<std::pair<std::string, Tensor<float>>> read_checkpoint(const std::string& path);

// Loads into an existing parameter set; every file entry must match a
// registered parameter by name and shape.
void load_checkpoint(const std::string& path, ParamSet<float>& params);

}  // namespace cola
