#include "dcl/streamlines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

using json = nlohmann::json;

namespace dcl {

void validate_streamline(const Streamline& s) {
  if (s.points.size() < 2) throw std::runtime_error("streamline '" + s.id + "' has fewer than 2 points");
  for (const auto& p : s.points)
    for (double c : p)
      if (!std::isfinite(c)) throw std::runtime_error("streamline '" + s.id + "' has non-finite coordinates");
  for (size_t i = 1; i < s.points.size(); ++i)
    if (s.points[i] == s.points[i - 1])
      throw std::runtime_error("streamline '" + s.id + "' has repeated consecutive points");
}

StreamlineBundle read_streamlines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  StreamlineBundle b;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Streamline s;
      s.id = j.at("id").get<std::string>();
      s.class_name = j.at("class").get<std::string>();
      for (const auto& p : j.at("points"))
        s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      validate_streamline(s);
      b.streamlines.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& s : b.streamlines)
    if (std::find(b.class_names.begin(), b.class_names.end(), s.class_name) == b.class_names.end())
      b.class_names.push_back(s.class_name);
  return b;
}

void write_streamlines(const StreamlineBundle& b, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : b.streamlines) {
    json j;
    j["id"] = s.id;
    j["class"] = s.class_name;
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({p[0], p[1], p[2]});
    j["points"] = pts;
    out << j.dump() << "\n";
  }
}

}  // namespace dcl
