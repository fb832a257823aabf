#include "dcl/volume_io.hpp"

#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace dcl {

namespace {

std::pair<fs::path, fs::path> header_raw_paths(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".raw") stem.replace_extension();
  fs::path hdr = stem;
  hdr += ".json";
  fs::path raw = stem;
  raw += ".raw";
  return {hdr, raw};
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  json j;
  in >> j;
  return j;
}

void save_json(const json& j, const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

}  // namespace

Volume3D read_volume(const fs::path& path) {
  auto [hdr_path, raw_path] = header_raw_paths(path);
  json h = load_json(hdr_path);

  Volume3D v;
  if (!h.contains("dims")) throw std::runtime_error(hdr_path.string() + ": missing field 'dims'");
  if (!h.contains("spacing")) throw std::runtime_error(hdr_path.string() + ": missing field 'spacing'");
  if (!h.contains("affine")) throw std::runtime_error(hdr_path.string() + ": missing field 'affine'");
  if (!h.contains("dtype")) throw std::runtime_error(hdr_path.string() + ": missing field 'dtype'");
  if (h["dtype"].get<std::string>() != "f32")
    throw std::runtime_error(hdr_path.string() + ": unknown dtype tag '" + h["dtype"].get<std::string>() + "'");
  if (h.contains("order") && h["order"].get<std::string>() != "x-fastest")
    throw std::runtime_error(hdr_path.string() + ": unsupported order '" + h["order"].get<std::string>() + "'");

  for (int a = 0; a < 3; ++a) {
    v.geom.dims[a] = h["dims"].at(a).get<int>();
    v.geom.spacing[a] = h["spacing"].at(a).get<double>();
  }
  if (h["affine"].size() != 16) throw std::runtime_error(hdr_path.string() + ": field 'affine' must have 16 entries");
  for (int i = 0; i < 16; ++i) v.geom.affine.m[i] = h["affine"].at(i).get<double>();
  v.geom.validate();

  std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
  if (!raw) throw std::runtime_error("cannot open " + raw_path.string());
  const size_t bytes = static_cast<size_t>(raw.tellg());
  const size_t expected = v.geom.voxel_count() * sizeof(float);
  if (bytes != expected)
    throw std::runtime_error(raw_path.string() + ": raw size " + std::to_string(bytes) +
                             " bytes does not match dims (" + std::to_string(expected) + " expected)");
  raw.seekg(0);
  v.data.resize(v.geom.voxel_count());
  raw.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(expected));
  if (!raw) throw std::runtime_error(raw_path.string() + ": short read");
  return v;
}

void write_volume(const Volume3D& v, const fs::path& path) {
  v.validate();
  if (!v.all_finite()) throw std::runtime_error("refusing to persist non-finite volume data");
  auto [hdr_path, raw_path] = header_raw_paths(path);
  if (hdr_path.has_parent_path()) fs::create_directories(hdr_path.parent_path());

  json h;
  h["dims"] = v.geom.dims;
  h["spacing"] = v.geom.spacing;
  h["affine"] = v.geom.affine.m;
  h["dtype"] = "f32";
  h["order"] = "x-fastest";
  save_json(h, hdr_path);

  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) throw std::runtime_error("cannot write " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
}

LabelVolume read_label_volume(const fs::path& dir) {
  json j = load_json(dir / "labels.json");
  LabelVolume lv;
  for (size_t i = 0; i < j["classes"].size(); ++i) {
    lv.class_names.push_back(j["classes"].at(i).get<std::string>());
    lv.channels.push_back(read_volume(dir / j["files"].at(i).get<std::string>()));
  }
  if (lv.channels.empty()) throw std::runtime_error(dir.string() + ": label volume has no channels");
  lv.geom = lv.channels[0].geom;
  lv.validate();
  return lv;
}

void write_label_volume(const LabelVolume& lv, const fs::path& dir) {
  lv.validate();
  fs::create_directories(dir);
  json j;
  j["classes"] = lv.class_names;
  std::vector<std::string> files;
  for (size_t i = 0; i < lv.channels.size(); ++i) {
    std::string name = "ch" + std::to_string(i);
    files.push_back(name + ".json");
    write_volume(lv.channels[i], dir / name);
  }
  j["files"] = files;
  save_json(j, dir / "labels.json");
}

Manifest read_manifest(const fs::path& path) {
  json j = load_json(path);
  Manifest m;
  m.seed = j.value("seed", 0ULL);
  for (const auto& s : j["subjects"]) {
    ManifestEntry e;
    e.id = s["id"].get<std::string>();
    e.t1w = s["t1w"].get<std::string>();
    e.fa = s["fa"].get<std::string>();
    e.precise = s["precise"].get<std::string>();
    e.coarse = s["coarse"].get<std::string>();
    m.subjects.push_back(e);
  }
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  json j;
  j["seed"] = m.seed;
  j["subjects"] = json::array();
  for (const auto& e : m.subjects) {
    json s;
    s["id"] = e.id;
    s["t1w"] = e.t1w;
    s["fa"] = e.fa;
    s["precise"] = e.precise;
    s["coarse"] = e.coarse;
    j["subjects"].push_back(s);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_json(j, path);
}

ModalitySample read_sample(const Manifest& m, const ManifestEntry& e) {
  ModalitySample s;
  s.subject_id = e.id;
  s.t1w = read_volume(m.base_dir / e.t1w);
  s.fa = read_volume(m.base_dir / e.fa);
  s.precise = read_label_volume(m.base_dir / e.precise);
  s.coarse = read_label_volume(m.base_dir / e.coarse);
  s.provenance = "imported";
  s.validate();
  return s;
}

}  // namespace dcl
