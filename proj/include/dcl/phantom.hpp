#pragma once

#include <filesystem>

#include "dcl/volume.hpp"
#include "dcl/volume_io.hpp"

namespace dcl {

struct PhantomConfig {
  uint64_t seed = 0;
  std::array<int, 3> dims{64, 80, 64};
  std::vector<std::string> class_names = kDefaultClasses;
  int tubes_per_class = 2;  // left/right pair
  double radius_min = 1.5, radius_max = 3.0;  // voxels

  double t1w_tissue = 0.5, t1w_nerve = 0.7, t1w_noise_sd = 0.05;
  double fa_background = 0.05, fa_nerve = 0.8, fa_noise_sd = 0.05;

  // coarse-label degradation
  int dilation_radius = 2;      // iterations of 6-connected dilation
  double boundary_flip_rate = 0.1;
  int max_translation = 1;      // voxels, per axis

  void validate() const;
};

// Deterministic per (cfg.seed, subject_index).
ModalitySample generate_phantom(const PhantomConfig& cfg, int subject_index);

LabelVolume degrade_to_coarse(const LabelVolume& precise, const PhantomConfig& cfg, uint64_t rng_seed);

Manifest generate_dataset(const PhantomConfig& cfg, int n_subjects, const std::filesystem::path& out_dir);

}  // namespace dcl
