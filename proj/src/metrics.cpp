#include "dcl/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

using json = nlohmann::ordered_json;

namespace dcl {

std::vector<ConfusionCounts> confusion_counts(const LabelVolume& pred, const LabelVolume& truth) {
  if (!(pred.geom == truth.geom) || pred.class_names != truth.class_names)
    throw std::runtime_error("confusion_counts: geometry or class list mismatch");
  std::vector<ConfusionCounts> out(pred.num_classes());
  for (size_t c = 0; c < pred.num_classes(); ++c) {
    const auto& p = pred.channels[c].data;
    const auto& t = truth.channels[c].data;
    ConfusionCounts& cc = out[c];
    for (size_t i = 0; i < p.size(); ++i) {
      const bool pp = p[i] != 0.0f, tt = t[i] != 0.0f;
      if (pp && tt) ++cc.tp;
      else if (pp) ++cc.fp;
      else if (tt) ++cc.fn;
      else ++cc.tn;
    }
  }
  return out;
}

ClassScores overlap_scores(const ConfusionCounts& c) {
  ClassScores s;
  s.counts = c;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  if (2 * tp + fp + fn > 0) s.dice = 2 * tp / (2 * tp + fp + fn);
  if (tp + fp + fn > 0) s.jaccard = tp / (tp + fp + fn);
  if (tp + fp > 0) s.precision = tp / (tp + fp);
  return s;
}

std::vector<std::array<int, 3>> labeled_voxels(const Volume3D& binary) {
  std::vector<std::array<int, 3>> out;
  const int nx = binary.geom.dims[0], ny = binary.geom.dims[1], nz = binary.geom.dims[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        if (binary.at(x, y, z) != 0.0f) out.push_back({x, y, z});
  return out;
}

namespace {

double dist_mm2(const std::array<int, 3>& a, const std::array<int, 3>& b,
                const std::array<double, 3>& sp) {
  const double dx = (a[0] - b[0]) * sp[0];
  const double dy = (a[1] - b[1]) * sp[1];
  const double dz = (a[2] - b[2]) * sp[2];
  return dx * dx + dy * dy + dz * dz;
}

// Mean over a of the nearest-neighbour distance into b, via expanding-shell
// search on a voxel hash. Shell s lower-bounds distance by s*min(spacing),
// so the search is exact.
double directed_mean_nn(const std::vector<std::array<int, 3>>& a,
                        const std::vector<std::array<int, 3>>& b,
                        const std::array<double, 3>& sp) {
  struct Key {
    int64_t v;
    bool operator==(const Key& o) const { return v == o.v; }
  };
  struct KeyHash {
    size_t operator()(const Key& k) const { return std::hash<int64_t>()(k.v); }
  };
  auto pack = [](int x, int y, int z) {
    return Key{(static_cast<int64_t>(x) & 0x1fffff) | ((static_cast<int64_t>(y) & 0x1fffff) << 21) |
               ((static_cast<int64_t>(z) & 0x1fffff) << 42)};
  };
  std::unordered_map<Key, std::vector<std::array<int, 3>>, KeyHash> grid;
  for (const auto& p : b) grid[pack(p[0], p[1], p[2])].push_back(p);
  const double min_sp = std::min({sp[0], sp[1], sp[2]});

  double sum = 0.0;
  for (const auto& q : a) {
    double best2 = std::numeric_limits<double>::infinity();
    for (int s = 0;; ++s) {
      if (best2 < std::numeric_limits<double>::infinity()) {
        const double bound = s * min_sp;
        if (bound * bound > best2) break;
      }
      bool any_cell = false;
      for (int dz = -s; dz <= s; ++dz)
        for (int dy = -s; dy <= s; ++dy)
          for (int dx = -s; dx <= s; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != s) continue;  // shell only
            auto it = grid.find(pack(q[0] + dx, q[1] + dy, q[2] + dz));
            if (it == grid.end()) continue;
            any_cell = true;
            for (const auto& p : it->second) best2 = std::min(best2, dist_mm2(q, p, sp));
          }
      (void)any_cell;
    }
    sum += std::sqrt(best2);
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

std::optional<double> ahd(const std::vector<std::array<int, 3>>& a,
                          const std::vector<std::array<int, 3>>& b,
                          const std::array<double, 3>& spacing) {
  if (a.empty() || b.empty()) return std::nullopt;
  return 0.5 * (directed_mean_nn(a, b, spacing) + directed_mean_nn(b, a, spacing));
}

std::optional<double> ahd_bruteforce(const std::vector<std::array<int, 3>>& a,
                                     const std::vector<std::array<int, 3>>& b,
                                     const std::array<double, 3>& spacing) {
  if (a.empty() || b.empty()) return std::nullopt;
  auto directed = [&](const auto& from, const auto& to) {
    double sum = 0;
    for (const auto& q : from) {
      double best2 = std::numeric_limits<double>::infinity();
      for (const auto& p : to) best2 = std::min(best2, dist_mm2(q, p, spacing));
      sum += std::sqrt(best2);
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

MetricsReport evaluate_case(const LabelVolume& pred, const LabelVolume& truth) {
  auto counts = confusion_counts(pred, truth);
  MetricsReport r;
  r.class_names = pred.class_names;
  double sd = 0, sj = 0, sp = 0, sa = 0;
  int nd = 0, nj = 0, np = 0, na = 0;
  for (size_t c = 0; c < counts.size(); ++c) {
    ClassScores s = overlap_scores(counts[c]);
    const auto pa = labeled_voxels(pred.channels[c]);
    const auto ta = labeled_voxels(truth.channels[c]);
    s.ahd = ahd(pa, ta, pred.geom.spacing);
    if (!s.dice || !s.ahd) r.undefined_classes.push_back(pred.class_names[c]);
    if (s.dice) { sd += *s.dice; ++nd; }
    if (s.jaccard) { sj += *s.jaccard; ++nj; }
    if (s.precision) { sp += *s.precision; ++np; }
    if (s.ahd) { sa += *s.ahd; ++na; }
    r.per_class.push_back(std::move(s));
  }
  if (nd) r.mean_dice = sd / nd;
  if (nj) r.mean_jaccard = sj / nj;
  if (np) r.mean_precision = sp / np;
  if (na) r.mean_ahd = sa / na;
  return r;
}

namespace {
json opt_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}
}  // namespace

std::string metrics_to_json(const MetricsReport& r) {
  json j;
  j["classes"] = json::object();
  for (size_t c = 0; c < r.class_names.size(); ++c) {
    const auto& s = r.per_class[c];
    json e;
    e["dice"] = opt_to_json(s.dice);
    e["jaccard"] = opt_to_json(s.jaccard);
    e["precision"] = opt_to_json(s.precision);
    e["ahd"] = opt_to_json(s.ahd);
    e["tp"] = s.counts.tp;
    e["fp"] = s.counts.fp;
    e["fn"] = s.counts.fn;
    j["classes"][r.class_names[c]] = e;
  }
  j["mean"] = {{"dice", opt_to_json(r.mean_dice)},
               {"jaccard", opt_to_json(r.mean_jaccard)},
               {"precision", opt_to_json(r.mean_precision)},
               {"ahd", opt_to_json(r.mean_ahd)}};
  j["undefined"] = r.undefined_classes;
  return j.dump(2);
}

void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << metrics_to_json(r) << "\n";
}

}  // namespace dcl
