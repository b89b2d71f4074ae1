#pragma once

#include <string>

#include "subadapt/model.hpp"

namespace subadapt {

/// Writes params to the "MADP" checkpoint format: magic, format version 1,
/// the five model dimensions as 32-bit little-endian unsigned integers, then
/// the 13 parameter tensors in serialization order as raw IEEE-754 64-bit
/// little-endian values. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ModelParams& params);

ModelParams load_checkpoint(const std::string& path);

}  // namespace subadapt
