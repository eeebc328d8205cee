#pragma once

#include <filesystem>

#include "dagan/adam.hpp"

namespace dagan {

// Container: "DAGN" magic, u32 LE version, u32 LE header length, JSON header
// {tensor name -> {shape, dtype, offset}}, then a little-endian payload.
// Payload width follows the dtype recorded per tensor (f32 in training mode,
// f64 otherwise); round trips are bit-exact.
void save_checkpoint(const ParamMap& params, const std::filesystem::path& path);
ParamMap load_checkpoint(const std::filesystem::path& path);

// Subset view: tensors whose name starts with prefix, prefix stripped.
ParamMap strip_prefix(const ParamMap& params, const std::string& prefix);

}  // namespace dagan
