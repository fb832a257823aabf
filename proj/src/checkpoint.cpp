#include "dcl/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace dcl::nn {

using json = nlohmann::ordered_json;

namespace {
constexpr char kMagic[8] = {'D', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, DclNet& net, const std::string& extra_json) {
  auto entries = net.state_entries();
  json manifest;
  manifest["config"] = json::parse(model_config_to_json(net.config()));
  manifest["meta"] = json::parse(extra_json);
  json arrays = json::array();
  for (auto& [name, t] : entries) {
    json a;
    a["name"] = name;
    a["count"] = t->size();
    arrays.push_back(a);
  }
  manifest["arrays"] = arrays;
  const std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(kMagic, 8);
  const uint64_t mlen = mtext.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mlen));
  for (auto& [name, t] : entries)
    f.write(reinterpret_cast<const char*>(t->v.data()),
            static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::unique_ptr<DclNet> load_checkpoint(const std::string& path, std::string* extra_json) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  json manifest = json::parse(mtext);

  ModelConfig cfg = model_config_from_json(manifest["config"].dump());
  auto net = std::make_unique<DclNet>(cfg, 0);
  auto entries = net->state_entries();
  if (manifest["arrays"].size() != entries.size())
    throw std::runtime_error("checkpoint: array table size mismatch in " + path);
  for (size_t i = 0; i < entries.size(); ++i) {
    const json& a = manifest["arrays"][i];
    auto& [name, t] = entries[i];
    if (a["name"].get<std::string>() != name)
      throw std::runtime_error("checkpoint: array order mismatch at '" + name + "' in " + path);
    if (a["count"].get<size_t>() != t->size())
      throw std::runtime_error("checkpoint: array size mismatch at '" + name + "' in " + path);
    f.read(reinterpret_cast<char*>(t->v.data()),
           static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("checkpoint: truncated arrays in " + path);
  if (extra_json) *extra_json = manifest["meta"].dump();
  return net;
}

}  // namespace dcl::nn
