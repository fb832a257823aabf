#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcl/volume.hpp"

namespace dcl {

// Volume format: <name>.json header + <name>.raw little-endian f32 payload.
// `path` may name either file or the bare stem; both sides are derived.
Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const Volume3D& v, const std::filesystem::path& path);

// LabelVolume directory: labels.json + one volume per channel.
LabelVolume read_label_volume(const std::filesystem::path& dir);
void write_label_volume(const LabelVolume& lv, const std::filesystem::path& dir);

struct ManifestEntry {
  std::string id;
  std::string t1w, fa, precise, coarse;  // paths relative to the manifest
};

struct Manifest {
  uint64_t seed = 0;
  std::vector<ManifestEntry> subjects;
  std::filesystem::path base_dir;  // set on read; not serialized
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

ModalitySample read_sample(const Manifest& m, const ManifestEntry& e);

}  // namespace dcl
