#pragma once

#include "flowsel/features.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace flowsel {

/// Reads a JSON Lines manifest: one {"id", "t_us", "pose": [x, y, z],
/// "payload_path"?} object per line; blank lines are skipped. Throws
/// ManifestError with the offending line number, and InstanceTooLarge above
/// kMaxFrames records.
std::vector<FrameRecord> read_manifest(std::istream& in);
std::vector<FrameRecord> read_manifest(const std::filesystem::path& path);

void write_manifest(std::ostream& out, std::span<const FrameRecord> frames);

}  // namespace flowsel
