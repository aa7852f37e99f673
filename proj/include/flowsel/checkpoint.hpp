#pragma once

#include "flowsel/tensor.hpp"

#include <filesystem>
#include <string>

namespace flowsel::nn {

constexpr int kCheckpointVersion = 1;

/// JSON document {"format_version", "params": [{"name", "shape", "values",
/// "trainable", "buffer"}]}. Doubles are written with round-trip precision.
std::string save_checkpoint(const ParamStore& params);

/// Loads values by name into an existing store. Every stored entry must
/// exist with the same shape (ShapeError otherwise); trainable flags are
/// restored.
void load_checkpoint(ParamStore& params, const std::string& json);

void save_checkpoint_file(const ParamStore& params, const std::filesystem::path& path);
void load_checkpoint_file(ParamStore& params, const std::filesystem::path& path);

}  // namespace flowsel::nn
