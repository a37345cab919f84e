#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cxs/scene.hpp"

namespace cxs {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : DatasetError { using DatasetError::DatasetError; };
struct VersionError : DatasetError { using DatasetError::DatasetError; };
struct TruncatedError : DatasetError { using DatasetError::DatasetError; };

/// Binary scene container, little-endian:
///   "CXSD", u32 version=1, u32 grid, u32 tile_px, u32 channels, u32 concepts,
///   u64 scene_count, then per scene: u64 scene_id, u64 label bitmask,
///   float32 HR mosaic row-major (channel, row, col).
void write_dataset(const std::vector<Scene>& scenes, const SceneSpec& spec,
                   const std::string& path);
std::vector<Scene> read_dataset(const std::string& path, SceneSpec* spec_out = nullptr);

/// Supervision sidecar: "CXSG", u32 version=1, u32 P, u64 scene_count, then
/// per scene P float32 g_star values in scene order.
void write_supervision(const std::vector<std::vector<double>>& g_star_per_scene,
                       const std::string& path);
std::vector<std::vector<double>> read_supervision(const std::string& path);

}  // namespace cxs
