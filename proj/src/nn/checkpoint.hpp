#pragma once

#include <filesystem>

#include "nn/model.hpp"

namespace iopfl::nn {

/// Writes `<prefix>.bin` (little-endian float64 values, layer order, then
/// parameter slot order) and `<prefix>.json` (manifest: architecture id,
/// wiring, per-tensor name/kind/shape/byte offset).
void save_checkpoint(const ModelWeights& model, const std::filesystem::path& prefix);

/// Inverse of save_checkpoint; bitwise lossless. Throws ErrorKind::kIo on
/// missing, truncated or inconsistent files.
ModelWeights load_checkpoint(const std::filesystem::path& prefix);

bool checkpoint_exists(const std::filesystem::path& prefix);

}  // namespace iopfl::nn
