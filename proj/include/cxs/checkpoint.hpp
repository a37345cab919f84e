#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cxs/tensor.hpp"

namespace cxs {

/// Checkpoint = JSON manifest (<path>.json: name, dtype, shape, byte offset
/// per tensor) + raw little-endian float32 blob (<path>.bin). Round-trips are
/// value-exact at float32.
void save_checkpoint(const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& path_base);

/// Loads every tensor named in the manifest. Throws std::runtime_error on
/// missing files or manifest/blob mismatch.
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path_base);

/// Finds a named tensor and copies its values into dst (shape must match).
void checkpoint_fill(const std::vector<std::pair<std::string, Tensor>>& loaded,
                     const std::string& name, Tensor& dst);

}  // namespace cxs
