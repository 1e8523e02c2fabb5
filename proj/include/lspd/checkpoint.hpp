#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "lspd/autodiff.hpp"

namespace lspd {

/// Parameter file: "LSPDCKPT", u32 version, u32 metadata length, metadata
/// JSON, u32 parameter count, then per parameter: u32 name length, name
/// bytes, u32 ndim, u32 dims..., little-endian f32 payload.
struct Checkpoint
{
  nlohmann::json meta = nlohmann::json::object();
  ad::ParamSet<float> params;
};

void save_checkpoint(std::filesystem::path const &path, Checkpoint const &ckpt);
/// Throws std::runtime_error("unrecognized checkpoint file") on bad magic,
/// version, or truncation.
Checkpoint load_checkpoint(std::filesystem::path const &path);

} // namespace lspd
