#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcl/metrics.hpp"
#include "dcl/nn/model.hpp"
#include "dcl/rng.hpp"
#include "dcl/volume.hpp"
#include "dcl/volume_io.hpp"

namespace dcl::train {

struct AugmentConfig {
  double hflip_p = 0.5;
  double brightness = 0.1;
  double contrast = 0.1;
  // single-channel analog of hue jitter: signed gamma on z-scored intensities
  double hue = 0.1;
};

struct TrainConfig {
  double lr = 0.002;
  double momentum = 0.9;
  int batch = 32;
  int epochs = 200;
  int folds = 5;
  uint64_t seed = 0;
  double threshold = 0.5;
  // boundary-flip noise applied to training precise labels only (ablation
  // robustness experiments); 0 disables
  double train_label_flip = 0.0;
  nn::ModelConfig model;
  AugmentConfig aug;

  void validate() const;
};

// CPU-friendly settings: batch 8, 30 epochs, narrow widths.
TrainConfig desk_preset();

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct Fold {
  std::vector<std::string> train_ids, val_ids;
};

// Deterministic shuffled round-robin partition; val sets disjoint, cover
// all ids, sizes differ by at most one.
std::vector<Fold> make_folds(std::vector<std::string> ids, int k, uint64_t seed);

// In-place: flip applies the same spatial transform to every channel;
// intensity jitter touches t1w/fa only; labels stay binary.
void augment_slice(SliceGroup& g, const AugmentConfig& cfg, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double dice = 0, bce = 0, coarse = 0, total = 0, val_dice = 0;
};

struct RunRecord {
  int fold = 0;
  int best_epoch = -1;
  double best_val_dice = 0.0;
  std::string checkpoint_path;
  std::vector<EpochLog> epochs;
  std::string config_echo;
};

RunRecord train_model(const Manifest& m, const TrainConfig& cfg, int fold,
                      const std::filesystem::path& out_dir, bool quiet = true);

// Slice-wise eval-mode inference; inputs reflect-padded to multiples of 16
// and cropped back. Normalizes the raw volumes internally.
void predict_subject(nn::DclNet& net, const Volume3D& t1w, const Volume3D& fa, double threshold,
                     const std::vector<std::string>& class_names, LabelVolume& bin,
                     std::vector<Volume3D>& prob);

struct SubjectEval {
  std::string id;
  MetricsReport report;
};

struct EvalAggregate {
  std::vector<SubjectEval> subjects;
  std::optional<double> mean_dice, sd_dice;
  std::optional<double> mean_jaccard, sd_jaccard;
  std::optional<double> mean_precision, sd_precision;
  std::optional<double> mean_ahd, sd_ahd;
};

EvalAggregate evaluate_model(nn::DclNet& net, const Manifest& m,
                             const std::vector<std::string>& ids, double threshold = 0.5);

std::string eval_aggregate_to_json(const EvalAggregate& e);

struct AblationRow {
  std::string name;
  nn::ModelConfig model;
  RunRecord run;
  EvalAggregate eval;
};

// Table-3 style matrix: baseline, +FEM, +AEM, +MEM, +MEM+DCL, all sharing
// folds and seed; writes table3.json and table3.csv under out_dir.
std::vector<AblationRow> run_ablation_matrix(const Manifest& m, const TrainConfig& base,
                                             const std::filesystem::path& out_dir,
                                             bool quiet = true);

}  // namespace dcl::train
