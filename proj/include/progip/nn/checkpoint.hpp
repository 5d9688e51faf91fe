#pragma once

#include <filesystem>
#include <utility>

#include "progip/nn/backbone.hpp"

namespace progip::nn {

/// Checkpoint layout:
///   8 bytes   magic "PROGIPCK"
///   u32 LE    format version (1)
///   u32 LE    header length in bytes
///   header    JSON {format_version, config, tensors: [{name, shape, offset_bytes}], blob_bytes}
///   blob      float32 little-endian parameters, layout order
void save_checkpoint(const std::filesystem::path& path, const BackboneConfig& cfg, const BackboneWeights& weights);

std::pair<BackboneConfig, BackboneWeights> load_checkpoint(const std::filesystem::path& path);

}  // namespace progip::nn
