#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcl/volume.hpp"

namespace dcl {

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct ClassScores {
  std::optional<double> dice, jaccard, precision, ahd;
  ConfusionCounts counts;
};

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<ClassScores> per_class;
  // means over classes where the metric is defined
  std::optional<double> mean_dice, mean_jaccard, mean_precision, mean_ahd;
  std::vector<std::string> undefined_classes;
};

std::vector<ConfusionCounts> confusion_counts(const LabelVolume& pred, const LabelVolume& truth);

// dice / jaccard / precision from counts; zero denominators stay unset.
ClassScores overlap_scores(const ConfusionCounts& c);

// Average Hausdorff distance in mm between two voxel-center point sets.
// Empty set on either side -> nullopt.
std::optional<double> ahd(const std::vector<std::array<int, 3>>& a,
                          const std::vector<std::array<int, 3>>& b,
                          const std::array<double, 3>& spacing);

// O(|A||B|) oracle, exact; used by tests and small inputs.
std::optional<double> ahd_bruteforce(const std::vector<std::array<int, 3>>& a,
                                     const std::vector<std::array<int, 3>>& b,
                                     const std::array<double, 3>& spacing);

std::vector<std::array<int, 3>> labeled_voxels(const Volume3D& binary);

MetricsReport evaluate_case(const LabelVolume& pred, const LabelVolume& truth);

std::string metrics_to_json(const MetricsReport& r);
void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path);

}  // namespace dcl
