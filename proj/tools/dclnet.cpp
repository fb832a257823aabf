#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include <CLI11.hpp>

#include "dcl/metrics.hpp"
#include "dcl/nn/checkpoint.hpp"
#include "dcl/phantom.hpp"
#include "dcl/train/trainer.hpp"
#include "dcl/volume_io.hpp"
#include "dcl/voxelize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

struct RunJson {
  fs::path dir;
  json j;
  explicit RunJson(const fs::path& out, const std::string& command, json config_echo,
                   uint64_t seed) {
    dir = out;
    fs::create_directories(dir);
    j["command"] = command;
    j["config"] = std::move(config_echo);
    j["seed"] = seed;
    j["version"] = "dclnet 0.1.0";
    j["started"] = iso_now();
    j["status"] = "running";
    write();
  }
  void finish(const std::string& status, const std::string& error = "") {
    j["finished"] = iso_now();
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    write();
  }
  void write() const { std::ofstream(dir / "run.json") << j.dump(2) << "\n"; }
};

void require_fresh(const fs::path& artifact, bool overwrite) {
  if (!overwrite && fs::exists(artifact))
    throw std::runtime_error(artifact.string() + " exists; pass --overwrite to replace it");
}

// --- metrics-plot helpers -------------------------------------------------

std::string svg_header(int w, int h) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n",
                w, h, w, h, w, h);
  return buf;
}

void plot_training_curves(const fs::path& log_path, const fs::path& out_svg) {
  std::ifstream f(log_path);
  if (!f) throw std::runtime_error("cannot open " + log_path.string());
  std::vector<std::array<double, 2>> series;  // total, val_dice
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    series.push_back({j["total"].get<double>(), j["val_dice"].get<double>()});
  }
  if (series.empty()) throw std::runtime_error("empty training log: " + log_path.string());
  const int W = 640, H = 360, M = 40;
  double tmax = 1e-9;
  for (auto& s : series) tmax = std::max(tmax, s[0]);
  std::string svg = svg_header(W, H);
  auto polyline = [&](int idx, double ymax, const char* color) {
    std::string pts;
    for (size_t i = 0; i < series.size(); ++i) {
      const double x = M + (W - 2.0 * M) * (series.size() == 1 ? 0.5 : double(i) / (series.size() - 1));
      const double y = H - M - (H - 2.0 * M) * (series[i][idx] / ymax);
      char b[48];
      std::snprintf(b, sizeof b, "%.1f,%.1f ", x, y);
      pts += b;
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
  };
  svg += "<text x=\"40\" y=\"20\" font-size=\"13\">total loss (blue), validation dice (green)</text>\n";
  svg += polyline(0, tmax, "#3366cc");
  svg += polyline(1, 1.0, "#33aa55");
  char axis[160];
  std::snprintf(axis, sizeof axis,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>"
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                M, H - M, W - M, H - M, M, M, M, H - M);
  svg += axis;
  svg += "</svg>\n";
  std::ofstream(out_svg) << svg;
}

void plot_metric_bars(const fs::path& metrics_path, const fs::path& out_svg) {
  json j = json::parse(read_text(metrics_path));
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [name, scores] : j["classes"].items())
    if (!scores["dice"].is_null()) bars.emplace_back(name, scores["dice"].get<double>());
  const int W = 640, H = 360, M = 40;
  std::string svg = svg_header(W, H);
  svg += "<text x=\"40\" y=\"20\" font-size=\"13\">per-class dice</text>\n";
  const double bw = bars.empty() ? 0 : (W - 2.0 * M) / bars.size();
  for (size_t i = 0; i < bars.size(); ++i) {
    const double bh = (H - 2.0 * M) * bars[i].second;
    char b[256];
    std::snprintf(b, sizeof b,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#3366cc\"/>"
                  "<text x=\"%.1f\" y=\"%d\" font-size=\"11\">%s %.3f</text>\n",
                  M + i * bw + 4, H - M - bh, bw - 8, bh, M + i * bw + 4, H - M + 14,
                  bars[i].first.c_str(), bars[i].second);
    svg += b;
  }
  svg += "</svg>\n";
  std::ofstream(out_svg) << svg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dclnet: dual-label collaborative learning pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed = 0;
  bool seed_set = false, overwrite = false, quiet = false;
  app.add_option("--config", config_path, "JSON config file")->each([](const std::string&) {});
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_set = true; });
  app.add_flag("--overwrite", overwrite, "replace existing outputs");
  app.add_flag("--quiet", quiet, "suppress progress output");

  // gen-phantom
  auto* gen = app.add_subcommand("gen-phantom", "generate a synthetic dataset");
  int gen_n = 10;
  gen->add_option("--n", gen_n, "number of subjects");

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "streamlines -> label volume");
  std::string vox_streamlines, vox_geometry;
  double vox_tau = 1.0;
  uint64_t vox_min_island = 5;
  bool vox_keep_largest = false;
  vox->add_option("--streamlines", vox_streamlines, "JSON-lines streamline file")->required();
  vox->add_option("--geometry", vox_geometry, "volume header defining the grid")->required();
  vox->add_option("--tau", vox_tau, "visit-count threshold");
  vox->add_option("--min-island", vox_min_island, "minimum component size");
  vox->add_flag("--keep-largest", vox_keep_largest, "retain only the largest component");

  // train
  auto* tr = app.add_subcommand("train", "train one fold");
  std::string tr_manifest;
  int tr_fold = 0;
  tr->add_option("--manifest", tr_manifest, "dataset manifest")->required();
  tr->add_option("--fold", tr_fold, "fold index");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
  std::string ab_manifest;
  ab->add_option("--manifest", ab_manifest, "dataset manifest")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "score a prediction against truth");
  std::string ev_pred, ev_truth;
  ev->add_option("--pred", ev_pred, "predicted label volume dir")->required();
  ev->add_option("--truth", ev_truth, "ground-truth label volume dir")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "volumetric inference");
  std::string pr_ckpt, pr_t1w, pr_fa;
  double pr_threshold = 0.5;
  pr->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
  pr->add_option("--t1w", pr_t1w, "T1w volume")->required();
  pr->add_option("--fa", pr_fa, "FA volume")->required();
  pr->add_option("--threshold", pr_threshold, "binarization threshold");

  // metrics-plot
  auto* mp = app.add_subcommand("metrics-plot", "emit SVG curves and bars");
  std::string mp_log, mp_metrics;
  mp->add_option("--log", mp_log, "train_log.jsonl for loss/dice curves");
  mp->add_option("--metrics", mp_metrics, "metrics.json for per-class bars");

  // model-summary
  auto* ms = app.add_subcommand("model-summary", "print parameter counts");
  std::string ms_ckpt;
  ms->add_option("--checkpoint", ms_ckpt, "checkpoint to summarize (else --config)");

  // let the global options (--config/--out/--seed/...) appear after the
  // subcommand name as well
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (out_dir.empty()) out_dir = ".";
  const fs::path out(out_dir);

  try {
    if (gen->parsed()) {
      dcl::PhantomConfig pc;
      if (!config_path.empty()) {
        json j = json::parse(read_text(config_path));
        static const std::vector<std::string> known = {
            "seed",        "dims",        "class_names",  "tubes_per_class", "radius_min",
            "radius_max",  "t1w_tissue",  "t1w_nerve",    "t1w_noise_sd",    "fa_background",
            "fa_nerve",    "fa_noise_sd", "dilation_radius", "boundary_flip_rate",
            "max_translation"};
        for (const auto& [k, v] : j.items())
          if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::runtime_error("phantom config: unknown key '" + k + "'");
        if (j.contains("seed")) pc.seed = j["seed"];
        if (j.contains("dims")) pc.dims = j["dims"].get<std::array<int, 3>>();
        if (j.contains("class_names")) pc.class_names = j["class_names"].get<std::vector<std::string>>();
        if (j.contains("tubes_per_class")) pc.tubes_per_class = j["tubes_per_class"];
        if (j.contains("radius_min")) pc.radius_min = j["radius_min"];
        if (j.contains("radius_max")) pc.radius_max = j["radius_max"];
        if (j.contains("t1w_tissue")) pc.t1w_tissue = j["t1w_tissue"];
        if (j.contains("t1w_nerve")) pc.t1w_nerve = j["t1w_nerve"];
        if (j.contains("t1w_noise_sd")) pc.t1w_noise_sd = j["t1w_noise_sd"];
        if (j.contains("fa_background")) pc.fa_background = j["fa_background"];
        if (j.contains("fa_nerve")) pc.fa_nerve = j["fa_nerve"];
        if (j.contains("fa_noise_sd")) pc.fa_noise_sd = j["fa_noise_sd"];
        if (j.contains("dilation_radius")) pc.dilation_radius = j["dilation_radius"];
        if (j.contains("boundary_flip_rate")) pc.boundary_flip_rate = j["boundary_flip_rate"];
        if (j.contains("max_translation")) pc.max_translation = j["max_translation"];
      }
      if (seed_set) pc.seed = seed;
      pc.validate();
      require_fresh(out / "manifest.json", overwrite);
      json echo{{"seed", pc.seed},
                {"dims", pc.dims},
                {"class_names", pc.class_names},
                {"tubes_per_class", pc.tubes_per_class},
                {"radius_min", pc.radius_min},
                {"radius_max", pc.radius_max},
                {"dilation_radius", pc.dilation_radius},
                {"boundary_flip_rate", pc.boundary_flip_rate},
                {"max_translation", pc.max_translation}};
      RunJson run(out, "gen-phantom", echo, pc.seed);
      try {
        dcl::generate_dataset(pc, gen_n, out);
        if (!quiet) std::fprintf(stderr, "wrote %d subjects to %s\n", gen_n, out.c_str());
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (vox->parsed()) {
      require_fresh(out / "labels" / "labels.json", overwrite);
      RunJson run(out, "voxelize", json::parse("{}"), seed);
      try {
        auto bundle = dcl::read_streamlines(vox_streamlines);
        auto geom = dcl::read_volume(vox_geometry).geom;
        dcl::IslandPolicy policy{vox_keep_largest, vox_min_island};
        auto lv = dcl::streamlines_to_label_volume(bundle, geom, vox_tau, policy);
        dcl::write_label_volume(lv, out / "labels");
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (tr->parsed() || ab->parsed()) {
      dcl::train::TrainConfig tc = dcl::train::desk_preset();
      if (!config_path.empty()) tc = dcl::train::train_config_from_json(read_text(config_path));
      if (seed_set) tc.seed = seed;
      const std::string manifest_path = tr->parsed() ? tr_manifest : ab_manifest;
      auto m = dcl::read_manifest(manifest_path);
      require_fresh(out / (tr->parsed() ? "run_record.json" : "table3.json"), overwrite);
      RunJson run(out, tr->parsed() ? "train" : "ablate",
                  json::parse(dcl::train::train_config_to_json(tc)), tc.seed);
      try {
        if (tr->parsed()) {
          auto rec = dcl::train::train_model(m, tc, tr_fold, out, quiet);
          if (!quiet)
            std::fprintf(stderr, "best epoch %d val dice %.4f\n", rec.best_epoch,
                         rec.best_val_dice);
        } else {
          dcl::train::run_ablation_matrix(m, tc, out, quiet);
        }
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (ev->parsed()) {
      require_fresh(out / "metrics.json", overwrite);
      RunJson run(out, "eval", json::parse("{}"), seed);
      try {
        auto pred = dcl::read_label_volume(ev_pred);
        auto truth = dcl::read_label_volume(ev_truth);
        auto report = dcl::evaluate_case(pred, truth);
        dcl::write_metrics_json(report, out / "metrics.json");
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (pr->parsed()) {
      require_fresh(out / "pred" / "labels.json", overwrite);
      RunJson run(out, "predict", json::parse("{}"), seed);
      try {
        auto net = dcl::nn::load_checkpoint(pr_ckpt);
        auto t1w = dcl::read_volume(pr_t1w);
        auto fa = dcl::read_volume(pr_fa);
        dcl::LabelVolume bin;
        std::vector<dcl::Volume3D> prob;
        std::vector<std::string> names = dcl::kDefaultClasses;
        names.resize(net->config().classes, "class");
        dcl::train::predict_subject(*net, t1w, fa, pr_threshold, names, bin, prob);
        dcl::write_label_volume(bin, out / "pred");
        for (size_t c = 0; c < prob.size(); ++c)
          dcl::write_volume(prob[c], out / ("prob_ch" + std::to_string(c)));
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (mp->parsed()) {
      if (mp_log.empty() && mp_metrics.empty())
        throw CLI::ValidationError("metrics-plot", "pass --log and/or --metrics");
      RunJson run(out, "metrics-plot", json::parse("{}"), seed);
      try {
        if (!mp_log.empty()) {
          require_fresh(out / "curves.svg", overwrite);
          plot_training_curves(mp_log, out / "curves.svg");
        }
        if (!mp_metrics.empty()) {
          require_fresh(out / "bars.svg", overwrite);
          plot_metric_bars(mp_metrics, out / "bars.svg");
        }
        run.finish("ok");
      } catch (const std::exception& e) {
        run.finish("error", e.what());
        throw;
      }
      return 0;
    }

    if (ms->parsed()) {
      std::unique_ptr<dcl::nn::DclNet> net;
      if (!ms_ckpt.empty()) {
        net = dcl::nn::load_checkpoint(ms_ckpt);
      } else {
        dcl::nn::ModelConfig mc;
        if (!config_path.empty()) mc = dcl::nn::model_config_from_json(read_text(config_path));
        net = std::make_unique<dcl::nn::DclNet>(mc, seed);
      }
      size_t total = 0;
      for (auto* p : net->params()) {
        std::printf("%-32s %zu\n", p->name.c_str(), p->w.size());
        total += p->w.size();
      }
      std::printf("%-32s %zu\n", "total", total);
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
