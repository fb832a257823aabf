#pragma once

#include <memory>
#include <string>

#include "dcl/nn/model.hpp"

namespace dcl::nn {

// Single-file archive: magic, a JSON manifest (config echo, named array
// table, caller-supplied metadata), then the raw little-endian f32 arrays.
void save_checkpoint(const std::string& path, DclNet& net, const std::string& extra_json = "{}");

// Rebuilds the model from the embedded config and restores every array.
// extra_json, when non-null, receives the metadata block verbatim.
std::unique_ptr<DclNet> load_checkpoint(const std::string& path,
                                        std::string* extra_json = nullptr);

}  // namespace dcl::nn
