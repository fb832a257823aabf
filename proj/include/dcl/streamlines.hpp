#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcl/volume.hpp"

namespace dcl {

struct Streamline {
  std::string id;
  std::string class_name;
  std::vector<Vec3> points;  // world mm, length >= 2, consecutive points distinct
};

struct StreamlineBundle {
  std::vector<Streamline> streamlines;
  std::vector<std::string> class_names;  // label channel order

  std::vector<const Streamline*> of_class(const std::string& name) const {
    std::vector<const Streamline*> out;
    for (const auto& s : streamlines)
      if (s.class_name == name) out.push_back(&s);
    return out;
  }
};

// JSON-lines: {"id": str, "class": str, "points": [[x,y,z],...]} per line.
StreamlineBundle read_streamlines(const std::filesystem::path& path);
void write_streamlines(const StreamlineBundle& b, const std::filesystem::path& path);

void validate_streamline(const Streamline& s);

}  // namespace dcl
