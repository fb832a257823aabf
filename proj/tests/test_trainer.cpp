#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dcl/nn/checkpoint.hpp"
#include "dcl/phantom.hpp"
#include "dcl/train/trainer.hpp"

using namespace dcl;
using namespace dcl::train;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Manifest tiny_dataset(const fs::path& dir, int n, uint64_t seed) {
  PhantomConfig pc;
  pc.seed = seed;
  pc.dims = {32, 48, 32};
  return generate_dataset(pc, n, dir);
}

TrainConfig tiny_train(uint64_t seed) {
  TrainConfig cfg = desk_preset();
  cfg.seed = seed;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.folds = 2;
  cfg.model.widths = {2, 3, 4, 5, 6};
  cfg.model.dropout = 0.0;
  return cfg;
}

SliceGroup make_slice(int nx, int ny, uint64_t seed) {
  SliceGroup g;
  g.nx = nx;
  g.ny = ny;
  Rng rng(seed);
  g.t1w.resize(static_cast<size_t>(nx) * ny);
  g.fa.resize(g.t1w.size());
  for (auto& v : g.t1w) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : g.fa) v = static_cast<float>(rng.uniform(-1, 1));
  g.precise.assign(2, std::vector<float>(g.t1w.size()));
  g.coarse.assign(2, std::vector<float>(g.t1w.size()));
  for (auto& ch : g.precise)
    for (auto& v : ch) v = rng.bernoulli(0.3) ? 1.0f : 0.0f;
  for (auto& ch : g.coarse)
    for (auto& v : ch) v = rng.bernoulli(0.4) ? 1.0f : 0.0f;
  return g;
}

}  // namespace

TEST_CASE("make_folds: disjoint cover with balanced sizes, deterministic") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));
  auto folds = make_folds(ids, 5, 42);
  REQUIRE(folds.size() == 5);
  std::set<std::string> all_val;
  for (const auto& f : folds) {
    CHECK(f.val_ids.size() == 2);
    CHECK(f.train_ids.size() == 8);
    for (const auto& id : f.val_ids) {
      CHECK(all_val.insert(id).second);  // disjoint
      CHECK(std::find(f.train_ids.begin(), f.train_ids.end(), id) == f.train_ids.end());
    }
    std::set<std::string> fold_union(f.train_ids.begin(), f.train_ids.end());
    fold_union.insert(f.val_ids.begin(), f.val_ids.end());
    CHECK(fold_union.size() == 10);
  }
  CHECK(all_val.size() == 10);

  auto again = make_folds(ids, 5, 42);
  for (size_t i = 0; i < folds.size(); ++i) CHECK(again[i].val_ids == folds[i].val_ids);

  // uneven split: 7 ids over 3 folds -> sizes differ by at most one
  std::vector<std::string> seven(ids.begin(), ids.begin() + 7);
  auto f3 = make_folds(seven, 3, 1);
  size_t mn = 7, mx = 0;
  for (const auto& f : f3) {
    mn = std::min(mn, f.val_ids.size());
    mx = std::max(mx, f.val_ids.size());
  }
  CHECK(mx - mn <= 1);
}

TEST_CASE("augment: exact no-op config, flip involution, binary labels") {
  AugmentConfig none;
  none.hflip_p = 0.0;
  none.brightness = none.contrast = none.hue = 0.0;
  SliceGroup g = make_slice(12, 10, 5);
  SliceGroup orig = g;
  Rng rng(1);
  augment_slice(g, none, rng);
  CHECK(g.t1w == orig.t1w);
  CHECK(g.fa == orig.fa);
  CHECK(g.precise == orig.precise);

  AugmentConfig fliponly;
  fliponly.hflip_p = 1.0;
  fliponly.brightness = fliponly.contrast = fliponly.hue = 0.0;
  SliceGroup f = orig;
  Rng r2(2);
  augment_slice(f, fliponly, r2);
  CHECK(f.t1w != orig.t1w);
  // flip moves labels and images coherently: flipping again restores
  Rng r3(3);
  augment_slice(f, fliponly, r3);
  CHECK(f.t1w == orig.t1w);
  CHECK(f.precise == orig.precise);
  CHECK(f.coarse == orig.coarse);

  AugmentConfig full;  // defaults: jitter on
  SliceGroup j = orig;
  Rng r4(4);
  augment_slice(j, full, r4);
  for (const auto& ch : j.precise)
    for (float v : ch) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("train config JSON: round trip, presets, unknown keys") {
  TrainConfig cfg = tiny_train(9);
  cfg.train_label_flip = 0.1;
  const std::string js = train_config_to_json(cfg);
  TrainConfig back = train_config_from_json(js);
  CHECK(back.lr == cfg.lr);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.seed == cfg.seed);
  CHECK(back.train_label_flip == cfg.train_label_flip);
  CHECK(back.model.widths == cfg.model.widths);

  TrainConfig desk = train_config_from_json(R"({"preset": "desk"})");
  CHECK(desk.batch == 8);
  CHECK(desk.epochs == 30);

  CHECK_THROWS_WITH_AS(train_config_from_json(R"({"lr": 0.1, "turbo": true})"),
                       doctest::Contains("turbo"), std::runtime_error);
  CHECK_THROWS_AS(train_config_from_json(R"({"lr": -1})"), std::runtime_error);
}

TEST_CASE("lr = 0 leaves parameters at their initialization") {
  auto data_dir = fresh_dir("dcl_tr_lr0_data");
  auto out_dir = fresh_dir("dcl_tr_lr0_out");
  Manifest m = tiny_dataset(data_dir, 4, 100);
  TrainConfig cfg = tiny_train(100);
  cfg.lr = 0.0;
  cfg.epochs = 1;
  RunRecord rec = train_model(m, cfg, 0, out_dir);

  auto loaded = nn::load_checkpoint(rec.checkpoint_path);
  nn::DclNet fresh(cfg.model, cfg.seed);
  auto lp = loaded->params();
  auto fp = fresh.params();
  REQUIRE(lp.size() == fp.size());
  for (size_t i = 0; i < lp.size(); ++i) {
    CHECK(lp[i]->name == fp[i]->name);
    CHECK(lp[i]->w.v == fp[i]->w.v);
  }
  fs::remove_all(data_dir);
  fs::remove_all(out_dir);
}

TEST_CASE("training makes progress and logs every component") {
  auto data_dir = fresh_dir("dcl_tr_desc_data");
  auto out_dir = fresh_dir("dcl_tr_desc_out");
  Manifest m = tiny_dataset(data_dir, 4, 7);
  TrainConfig cfg = tiny_train(7);
  cfg.epochs = 3;
  RunRecord rec = train_model(m, cfg, 0, out_dir);

  REQUIRE(rec.epochs.size() == 3);
  CHECK(rec.epochs.back().total < rec.epochs.front().total);
  for (const auto& e : rec.epochs) {
    CHECK(e.total == doctest::Approx(e.dice + e.bce + e.coarse).epsilon(1e-6));
    CHECK(e.total > 0.0);
    CHECK(e.val_dice >= 0.0);
    CHECK(e.val_dice <= 1.0);
  }
  CHECK(rec.best_epoch >= 0);
  CHECK(fs::exists(rec.checkpoint_path));
  CHECK(fs::exists(out_dir / "train_log.jsonl"));
  CHECK(fs::exists(out_dir / "run_record.json"));

  std::ifstream log(out_dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.find("\"dice_loss\"") != std::string::npos);
    CHECK(line.find("\"val_dice\"") != std::string::npos);
  }
  CHECK(lines == 3);
  fs::remove_all(data_dir);
  fs::remove_all(out_dir);
}

TEST_CASE("single-label configuration reports a zero coarse component") {
  auto data_dir = fresh_dir("dcl_tr_dcl_data");
  auto out_dir = fresh_dir("dcl_tr_dcl_out");
  Manifest m = tiny_dataset(data_dir, 4, 11);
  TrainConfig cfg = tiny_train(11);
  cfg.epochs = 1;
  cfg.model.use_dcl = false;
  RunRecord rec = train_model(m, cfg, 0, out_dir);
  REQUIRE(rec.epochs.size() == 1);
  CHECK(rec.epochs[0].coarse == 0.0);
  fs::remove_all(data_dir);
  fs::remove_all(out_dir);
}

TEST_CASE("same seed reproduces the first epoch exactly") {
  auto data_dir = fresh_dir("dcl_tr_det_data");
  Manifest m = tiny_dataset(data_dir, 4, 13);
  TrainConfig cfg = tiny_train(13);
  cfg.epochs = 1;

  auto o1 = fresh_dir("dcl_tr_det_o1");
  auto o2 = fresh_dir("dcl_tr_det_o2");
  RunRecord r1 = train_model(m, cfg, 0, o1);
  RunRecord r2 = train_model(m, cfg, 0, o2);
  CHECK(r1.epochs[0].total == r2.epochs[0].total);
  CHECK(r1.epochs[0].dice == r2.epochs[0].dice);
  CHECK(r1.epochs[0].val_dice == r2.epochs[0].val_dice);
  fs::remove_all(data_dir);
  fs::remove_all(o1);
  fs::remove_all(o2);
}

TEST_CASE("predict_subject handles geometry that is not a multiple of 16") {
  nn::ModelConfig mc;
  mc.widths = {2, 3, 4, 5, 6};
  mc.classes = 2;
  nn::DclNet net(mc, 3);

  Geometry g{{30, 25, 6}};
  Volume3D t1w(g), fa(g);
  Rng rng(21);
  for (auto& v : t1w.data) v = static_cast<float>(rng.uniform(0, 1));
  for (auto& v : fa.data) v = static_cast<float>(rng.uniform(0, 1));

  LabelVolume bin;
  std::vector<Volume3D> prob;
  predict_subject(net, t1w, fa, 0.5, {"a", "b"}, bin, prob);
  REQUIRE(bin.channels.size() == 2);
  REQUIRE(prob.size() == 2);
  for (size_t c = 0; c < 2; ++c) {
    CHECK(bin.channels[c].geom.dims == g.dims);
    CHECK(prob[c].geom.dims == g.dims);
    for (size_t i = 0; i < prob[c].data.size(); ++i) {
      CHECK(prob[c].data[i] >= 0.0f);
      CHECK(prob[c].data[i] <= 1.0f);
      CHECK(bin.channels[c].data[i] == (prob[c].data[i] > 0.5f ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("evaluate_model aggregates the requested subjects") {
  auto data_dir = fresh_dir("dcl_tr_eval_data");
  Manifest m = tiny_dataset(data_dir, 3, 17);
  nn::ModelConfig mc;
  mc.widths = {2, 3, 4, 5, 6};
  mc.classes = static_cast<int>(kDefaultClasses.size());
  nn::DclNet net(mc, 5);

  std::vector<std::string> ids{m.subjects[0].id, m.subjects[2].id};
  EvalAggregate agg = evaluate_model(net, m, ids);
  REQUIRE(agg.subjects.size() == 2);
  CHECK(agg.subjects[0].id == ids[0]);
  CHECK(agg.subjects[1].id == ids[1]);
  const std::string js = eval_aggregate_to_json(agg);
  CHECK(js.find("\"mean_dice\"") != std::string::npos);
  CHECK(js.find(ids[0]) != std::string::npos);
  fs::remove_all(data_dir);
}
