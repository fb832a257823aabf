#include "dcl/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <json.hpp>

#include "dcl/nn/checkpoint.hpp"
#include "dcl/nn/losses.hpp"
#include "dcl/resample.hpp"

namespace dcl::train {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr >= 0)) throw std::runtime_error("train config: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw std::runtime_error("train config: momentum in [0,1)");
  if (batch < 1) throw std::runtime_error("train config: batch must be >= 1");
  if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
  if (folds < 2) throw std::runtime_error("train config: folds must be >= 2");
  if (threshold <= 0 || threshold >= 1) throw std::runtime_error("train config: threshold in (0,1)");
  if (train_label_flip < 0 || train_label_flip >= 0.5)
    throw std::runtime_error("train config: train_label_flip in [0,0.5)");
  model.validate();
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.batch = 8;
  c.epochs = 30;
  // desk-scale lr: the paper-protocol 0.002 is tuned for batch 32 at full
  // width/resolution; at desk widths on 2D phantom slices it undershoots by
  // orders of magnitude and the net collapses to background
  c.lr = 0.2;
  c.model.widths = {4, 8, 16, 32, 64};
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["batch"] = c.batch;
  j["epochs"] = c.epochs;
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["threshold"] = c.threshold;
  j["train_label_flip"] = c.train_label_flip;
  j["model"] = json::parse(nn::model_config_to_json(c.model));
  j["aug"] = {{"hflip_p", c.aug.hflip_p},
              {"brightness", c.aug.brightness},
              {"contrast", c.aug.contrast},
              {"hue", c.aug.hue}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  json j = json::parse(text);
  static const std::vector<std::string> known = {"lr",     "momentum",  "batch",
                                                 "epochs", "folds",     "seed",
                                                 "threshold", "train_label_flip",
                                                 "model",  "aug",       "preset"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::runtime_error("train config: unknown key '" + k + "'");
  if (j.contains("preset")) {
    const std::string p = j["preset"];
    if (p == "desk")
      c = desk_preset();
    else if (p != "paper-protocol")
      throw std::runtime_error("train config: unknown preset '" + p + "'");
  }
  if (j.contains("lr")) c.lr = j["lr"];
  if (j.contains("momentum")) c.momentum = j["momentum"];
  if (j.contains("batch")) c.batch = j["batch"];
  if (j.contains("epochs")) c.epochs = j["epochs"];
  if (j.contains("folds")) c.folds = j["folds"];
  if (j.contains("seed")) c.seed = j["seed"];
  if (j.contains("threshold")) c.threshold = j["threshold"];
  if (j.contains("train_label_flip")) c.train_label_flip = j["train_label_flip"];
  if (j.contains("model")) {
    nn::ModelConfig base = c.model;  // preset may have set widths
    nn::ModelConfig parsed = nn::model_config_from_json(j["model"].dump());
    // fields absent from the file keep the preset value only for widths
    if (!j["model"].contains("widths")) parsed.widths = base.widths;
    c.model = parsed;
  }
  if (j.contains("aug")) {
    static const std::vector<std::string> aug_known = {"hflip_p", "brightness", "contrast", "hue"};
    for (const auto& [k, v] : j["aug"].items())
      if (std::find(aug_known.begin(), aug_known.end(), k) == aug_known.end())
        throw std::runtime_error("train config: unknown aug key '" + k + "'");
    if (j["aug"].contains("hflip_p")) c.aug.hflip_p = j["aug"]["hflip_p"];
    if (j["aug"].contains("brightness")) c.aug.brightness = j["aug"]["brightness"];
    if (j["aug"].contains("contrast")) c.aug.contrast = j["aug"]["contrast"];
    if (j["aug"].contains("hue")) c.aug.hue = j["aug"]["hue"];
  }
  c.validate();
  return c;
}

std::vector<Fold> make_folds(std::vector<std::string> ids, int k, uint64_t seed) {
  if (static_cast<int>(ids.size()) < k)
    throw std::runtime_error("make_folds: fewer subjects than folds");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed, 0xF01D);
  for (size_t i = ids.size() - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_int(i + 1)]);
  std::vector<Fold> folds(k);
  for (size_t i = 0; i < ids.size(); ++i) folds[i % k].val_ids.push_back(ids[i]);
  for (int f = 0; f < k; ++f)
    for (size_t i = 0; i < ids.size(); ++i)
      if (i % k != static_cast<size_t>(f)) folds[f].train_ids.push_back(ids[i]);
  return folds;
}

namespace {

// Flip 6-boundary voxels of each channel with the given probability.
void flip_boundary_labels(LabelVolume& lv, double rate, Rng& rng) {
  const auto [nx, ny, nz] = lv.geom.dims;
  for (auto& ch : lv.channels) {
    const std::vector<float> src = ch.data;
    auto val = [&](int x, int y, int z) -> bool {
      return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz &&
             src[ch.index(x, y, z)] > 0.5f;
    };
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const bool v = val(x, y, z);
          const bool boundary = v != val(x - 1, y, z) || v != val(x + 1, y, z) ||
                                v != val(x, y - 1, z) || v != val(x, y + 1, z) ||
                                v != val(x, y, z - 1) || v != val(x, y, z + 1);
          if (boundary && rng.bernoulli(rate)) ch.data[ch.index(x, y, z)] = v ? 0.0f : 1.0f;
        }
  }
}

int round_up16(int v) { return (v + 15) / 16 * 16; }

int reflect_index(int i, int n) {
  if (i < n) return i;
  const int r = 2 * n - 2 - i;
  return std::max(0, r);
}

double validation_mean_dice(nn::DclNet& net, const std::vector<ModalitySample>& vals,
                            double threshold) {
  double sum = 0;
  int defined = 0;
  for (const auto& s : vals) {
    LabelVolume bin;
    std::vector<Volume3D> prob;
    predict_subject(net, s.t1w, s.fa, threshold, s.precise.class_names, bin, prob);
    auto counts = confusion_counts(bin, s.precise);
    double dsum = 0;
    int dn = 0;
    for (const auto& c : counts) {
      auto sc = overlap_scores(c);
      if (sc.dice) {
        dsum += *sc.dice;
        ++dn;
      }
    }
    if (dn > 0) {
      sum += dsum / dn;
      ++defined;
    }
  }
  return defined > 0 ? sum / defined : 0.0;
}

struct MeanSd {
  std::optional<double> mean, sd;
};

MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd out;
  if (xs.empty()) return out;
  double m = 0;
  for (double x : xs) m += x;
  m /= xs.size();
  out.mean = m;
  if (xs.size() > 1) {
    double s2 = 0;
    for (double x : xs) s2 += (x - m) * (x - m);
    out.sd = std::sqrt(s2 / (xs.size() - 1));
  } else {
    out.sd = 0.0;
  }
  return out;
}

}  // namespace

void predict_subject(nn::DclNet& net, const Volume3D& t1w, const Volume3D& fa, double threshold,
                     const std::vector<std::string>& class_names, LabelVolume& bin,
                     std::vector<Volume3D>& prob) {
  if (!(t1w.geom == fa.geom)) throw std::runtime_error("predict: modality geometry mismatch");
  const Volume3D nt = normalize_zscore(t1w);
  const Volume3D nf = normalize_zscore(fa);
  const auto [nx, ny, nz] = t1w.geom.dims;
  const int W = round_up16(nx), H = round_up16(ny);
  const int C = static_cast<int>(class_names.size());
  prob.assign(C, Volume3D(t1w.geom));
  bin = LabelVolume(t1w.geom, class_names);
  Rng unused(0);
  const int chunk = 8;
  for (int z0 = 0; z0 < nz; z0 += chunk) {
    const int n = std::min(chunk, nz - z0);
    nn::Tensor ta(n, 1, H, W), fb(n, 1, H, W);
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < H; ++y) {
        const int sy = reflect_index(y, ny);
        for (int x = 0; x < W; ++x) {
          const int sx = reflect_index(x, nx);
          ta.at(i, 0, y, x) = nt.at(sx, sy, z0 + i);
          fb.at(i, 0, y, x) = nf.at(sx, sy, z0 + i);
        }
      }
    nn::Tensor p1, p2;
    net.forward(ta, fb, false, unused, p1, p2, nullptr, false);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < ny; ++y)
          for (int x = 0; x < nx; ++x) {
            const float p = p1.at(i, c, y, x);
            prob[c].at(x, y, z0 + i) = p;
            bin.channels[c].at(x, y, z0 + i) = p > threshold ? 1.0f : 0.0f;
          }
  }
}

RunRecord train_model(const Manifest& m, const TrainConfig& cfg, int fold,
                      const std::filesystem::path& out_dir, bool quiet) {
  cfg.validate();
  fs::create_directories(out_dir);

  std::vector<std::string> ids;
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.subjects) {
    ids.push_back(e.id);
    by_id[e.id] = &e;
  }
  auto folds = make_folds(ids, cfg.folds, cfg.seed);
  if (fold < 0 || fold >= static_cast<int>(folds.size()))
    throw std::runtime_error("train: fold index out of range");
  const Fold& fo = folds[fold];

  const int C = cfg.model.classes;
  std::vector<SliceGroup> slices;
  for (size_t si = 0; si < fo.train_ids.size(); ++si) {
    ModalitySample s = read_sample(m, *by_id.at(fo.train_ids[si]));
    if (static_cast<int>(s.precise.num_classes()) != C)
      throw std::runtime_error("train: class count differs from model config");
    if (cfg.train_label_flip > 0) {
      Rng noise(cfg.seed, 0xF11F0000ull + si);
      flip_boundary_labels(s.precise, cfg.train_label_flip, noise);
    }
    s.t1w = normalize_zscore(s.t1w);
    s.fa = normalize_zscore(s.fa);
    auto sl = extract_axial_slices(s);
    slices.insert(slices.end(), std::make_move_iterator(sl.begin()),
                  std::make_move_iterator(sl.end()));
  }
  if (slices.empty()) throw std::runtime_error("train: no training slices");
  const int w = slices[0].nx, h = slices[0].ny;
  if (w % 16 != 0 || h % 16 != 0)
    throw std::runtime_error("train: slice dims must be divisible by 16");
  const size_t plane = static_cast<size_t>(w) * h;

  std::vector<ModalitySample> val_samples;
  for (const auto& id : fo.val_ids) val_samples.push_back(read_sample(m, *by_id.at(id)));

  nn::DclNet net(cfg.model, cfg.seed);
  auto params = net.params();
  Rng order_rng(cfg.seed, 0x5EED1), aug_rng(cfg.seed, 0x5EED2), drop_rng(cfg.seed, 0x5EED3);

  RunRecord rec;
  rec.fold = fold;
  rec.config_echo = train_config_to_json(cfg);
  std::ofstream log(out_dir / "train_log.jsonl");
  const std::string best_path = (out_dir / "best.ckpt").string();
  double best = -1.0;

  std::vector<size_t> order(slices.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
    double e_dice = 0, e_bce = 0, e_coarse = 0, e_total = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const int n = static_cast<int>(std::min<size_t>(cfg.batch, order.size() - start));
      nn::Tensor ta(n, 1, h, w), fb(n, 1, h, w);
      std::vector<std::vector<float>> gvec(n), yvec(n);
      for (int i = 0; i < n; ++i) {
        SliceGroup g = slices[order[start + i]];
        augment_slice(g, cfg.aug, aug_rng);
        std::copy(g.t1w.begin(), g.t1w.end(), ta.v.begin() + ta.idx(i, 0, 0, 0));
        std::copy(g.fa.begin(), g.fa.end(), fb.v.begin() + fb.idx(i, 0, 0, 0));
        gvec[i].reserve(C * plane);
        yvec[i].reserve(C * plane);
        for (int c = 0; c < C; ++c) {
          gvec[i].insert(gvec[i].end(), g.precise[c].begin(), g.precise[c].end());
          yvec[i].insert(yvec[i].end(), g.coarse[c].begin(), g.coarse[c].end());
        }
      }
      nn::Tensor p1, p2;
      net.forward(ta, fb, true, drop_rng, p1, p2, nullptr, cfg.model.use_dcl);
      nn::Tensor gp1(n, C, h, w), gp2;
      if (cfg.model.use_dcl) gp2 = nn::Tensor(n, C, h, w);
      double b_dice = 0, b_bce = 0, b_coarse = 0;
      for (int i = 0; i < n; ++i) {
        std::vector<float> p1v(p1.v.begin() + p1.idx(i, 0, 0, 0),
                               p1.v.begin() + p1.idx(i, 0, 0, 0) + C * plane);
        std::vector<float> p2v;
        if (cfg.model.use_dcl)
          p2v.assign(p2.v.begin() + p2.idx(i, 0, 0, 0),
                     p2.v.begin() + p2.idx(i, 0, 0, 0) + C * plane);
        else
          p2v.assign(C * plane, 0.5f);
        std::vector<float> g1(C * plane, 0.0f), g2(C * plane, 0.0f);
        auto lb = nn::total_loss<float>(p1v, p2v, gvec[i], yvec[i], C, nn::Reduction::Mean, &g1,
                                        &g2, cfg.model.use_dcl);
        b_dice += lb.dice;
        b_bce += lb.bce;
        b_coarse += lb.coarse;
        const float inv = 1.0f / n;
        for (size_t k = 0; k < g1.size(); ++k) gp1.v[gp1.idx(i, 0, 0, 0) + k] = g1[k] * inv;
        if (cfg.model.use_dcl)
          for (size_t k = 0; k < g2.size(); ++k) gp2.v[gp2.idx(i, 0, 0, 0) + k] = g2[k] * inv;
      }
      b_dice /= n;
      b_bce /= n;
      b_coarse /= n;
      const double b_total = b_dice + b_bce + b_coarse;
      if (!std::isfinite(b_total)) {
        nn::save_checkpoint((out_dir / "diverged.ckpt").string(), net,
                            "{\"note\":\"params at divergence\"}");
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      }
      net.zero_grad();
      net.backward(gp1, gp2);
      for (nn::Param* p : params)
        for (size_t k = 0; k < p->w.size(); ++k) {
          p->mom.v[k] = static_cast<float>(cfg.momentum) * p->mom.v[k] + p->g.v[k];
          p->w.v[k] -= static_cast<float>(cfg.lr) * p->mom.v[k];
        }
      e_dice += b_dice;
      e_bce += b_bce;
      e_coarse += b_coarse;
      e_total += b_total;
      ++batches;
    }
    e_dice /= batches;
    e_bce /= batches;
    e_coarse /= batches;
    e_total /= batches;

    const double vd = validation_mean_dice(net, val_samples, cfg.threshold);
    EpochLog el{epoch, e_dice, e_bce, e_coarse, e_total, vd};
    rec.epochs.push_back(el);
    json line;
    line["epoch"] = epoch;
    line["dice_loss"] = e_dice;
    line["bce_loss"] = e_bce;
    line["coarse_loss"] = e_coarse;
    line["total"] = e_total;
    line["val_dice"] = vd;
    log << line.dump() << "\n";
    log.flush();
    if (!quiet)
      std::fprintf(stderr, "epoch %d total %.4f val_dice %.4f\n", epoch, e_total, vd);
    if (vd > best) {
      best = vd;
      rec.best_epoch = epoch;
      rec.best_val_dice = vd;
      json meta;
      meta["epoch"] = epoch;
      meta["val_dice"] = vd;
      meta["fold"] = fold;
      nn::save_checkpoint(best_path, net, meta.dump());
    }
  }
  rec.checkpoint_path = best_path;

  json rr;
  rr["fold"] = rec.fold;
  rr["best_epoch"] = rec.best_epoch;
  rr["best_val_dice"] = rec.best_val_dice;
  rr["checkpoint"] = rec.checkpoint_path;
  rr["config"] = json::parse(rec.config_echo);
  std::ofstream(out_dir / "run_record.json") << rr.dump(2) << "\n";
  return rec;
}

EvalAggregate evaluate_model(nn::DclNet& net, const Manifest& m,
                             const std::vector<std::string>& ids, double threshold) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.subjects) by_id[e.id] = &e;
  EvalAggregate agg;
  std::vector<double> dices, jaccards, precisions, ahds;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::runtime_error("evaluate: unknown subject id '" + id + "'");
    ModalitySample s = read_sample(m, *it->second);
    LabelVolume bin;
    std::vector<Volume3D> prob;
    predict_subject(net, s.t1w, s.fa, threshold, s.precise.class_names, bin, prob);
    MetricsReport r = evaluate_case(bin, s.precise);
    if (r.mean_dice) dices.push_back(*r.mean_dice);
    if (r.mean_jaccard) jaccards.push_back(*r.mean_jaccard);
    if (r.mean_precision) precisions.push_back(*r.mean_precision);
    if (r.mean_ahd) ahds.push_back(*r.mean_ahd);
    agg.subjects.push_back({id, std::move(r)});
  }
  auto d = mean_sd(dices);
  agg.mean_dice = d.mean;
  agg.sd_dice = d.sd;
  auto jj = mean_sd(jaccards);
  agg.mean_jaccard = jj.mean;
  agg.sd_jaccard = jj.sd;
  auto pp = mean_sd(precisions);
  agg.mean_precision = pp.mean;
  agg.sd_precision = pp.sd;
  auto aa = mean_sd(ahds);
  agg.mean_ahd = aa.mean;
  agg.sd_ahd = aa.sd;
  return agg;
}

namespace {
json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace

std::string eval_aggregate_to_json(const EvalAggregate& e) {
  json j;
  j["mean_dice"] = opt(e.mean_dice);
  j["sd_dice"] = opt(e.sd_dice);
  j["mean_jaccard"] = opt(e.mean_jaccard);
  j["sd_jaccard"] = opt(e.sd_jaccard);
  j["mean_precision"] = opt(e.mean_precision);
  j["sd_precision"] = opt(e.sd_precision);
  j["mean_ahd"] = opt(e.mean_ahd);
  j["sd_ahd"] = opt(e.sd_ahd);
  json subs = json::array();
  for (const auto& s : e.subjects) {
    json sj;
    sj["id"] = s.id;
    sj["report"] = json::parse(metrics_to_json(s.report));
    subs.push_back(sj);
  }
  j["subjects"] = subs;
  return j.dump(2);
}

std::vector<AblationRow> run_ablation_matrix(const Manifest& m, const TrainConfig& base,
                                             const std::filesystem::path& out_dir, bool quiet) {
  struct RowSpec {
    const char* name;
    const char* dir;
    bool fem, aem, dcl;
  };
  static const RowSpec rows[] = {{"baseline", "baseline", false, false, false},
                                 {"+FEM", "fem", true, false, false},
                                 {"+AEM", "aem", false, true, false},
                                 {"+MEM", "mem", true, true, false},
                                 {"+MEM+DCL", "mem_dcl", true, true, true}};
  fs::create_directories(out_dir);

  std::vector<std::string> ids;
  for (const auto& e : m.subjects) ids.push_back(e.id);
  const auto folds = make_folds(ids, base.folds, base.seed);

  std::vector<AblationRow> out;
  for (const auto& r : rows) {
    TrainConfig cfg = base;
    cfg.model.use_fem = r.fem;
    cfg.model.use_aem = r.aem;
    cfg.model.use_dcl = r.dcl;
    AblationRow row;
    row.name = r.name;
    row.model = cfg.model;
    row.run = train_model(m, cfg, 0, out_dir / r.dir, quiet);
    auto net = nn::load_checkpoint(row.run.checkpoint_path);
    row.eval = evaluate_model(*net, m, folds[0].val_ids, cfg.threshold);
    out.push_back(std::move(row));
  }

  json table = json::array();
  std::string csv = "name,fem,aem,dcl,dice_mean,dice_sd,jaccard_mean,jaccard_sd,"
                    "precision_mean,precision_sd,ahd_mean,ahd_sd\n";
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("");
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  for (const auto& row : out) {
    json rj;
    rj["name"] = row.name;
    rj["use_fem"] = row.model.use_fem;
    rj["use_aem"] = row.model.use_aem;
    rj["use_dcl"] = row.model.use_dcl;
    rj["best_val_dice"] = row.run.best_val_dice;
    rj["metrics"] = json::parse(eval_aggregate_to_json(row.eval));
    table.push_back(rj);
    csv += row.name;
    csv += "," + std::to_string(int(row.model.use_fem)) + "," +
           std::to_string(int(row.model.use_aem)) + "," + std::to_string(int(row.model.use_dcl));
    csv += "," + cell(row.eval.mean_dice) + "," + cell(row.eval.sd_dice);
    csv += "," + cell(row.eval.mean_jaccard) + "," + cell(row.eval.sd_jaccard);
    csv += "," + cell(row.eval.mean_precision) + "," + cell(row.eval.sd_precision);
    csv += "," + cell(row.eval.mean_ahd) + "," + cell(row.eval.sd_ahd) + "\n";
  }
  std::ofstream(out_dir / "table3.json") << table.dump(2) << "\n";
  std::ofstream(out_dir / "table3.csv") << csv;
  return out;
}

}  // namespace dcl::train
