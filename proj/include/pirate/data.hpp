#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pirate/grid.hpp"

namespace pirate {

// Synthetic phantom data: registration pairs with segmentation labels and
// known smooth ground-truth deformations, plus field datasets for denoiser
// training. Everything is deterministic under its seed.

struct Phantom {
  Volume volume;
  LabelMask labels;
};

/// Piecewise-smooth phantom made of nested, smoothly deformed ellipsoidal
/// regions with distinct intensities in [0,1] and matching labels. At least
/// four non-empty labels; `complexity` adds inner blobs.
Phantom make_phantom(const std::vector<int>& dims, std::uint64_t seed,
                     int complexity = 2);

/// Gaussian-filtered white noise per channel, rescaled so the largest
/// displacement magnitude equals `magnitude` (voxels). When fold-freedom is
/// requested the construction is checked and parameters producing folds are
/// rejected.
RegistrationField make_smooth_field(const std::vector<int>& dims,
                                    std::uint64_t seed, double magnitude,
                                    double smoothness_scale,
                                    bool require_fold_free = true);

struct RegistrationPair {
  Volume fixed;
  LabelMask fixed_mask;
  Volume moving;
  LabelMask moving_mask;
  RegistrationField ground_truth;
};

/// fixed = phantom; moving = phantom warped by the ground-truth field
/// (labels nearest-neighbor).
RegistrationPair make_pair(const Phantom& phantom,
                           const RegistrationField& gt_field);

struct DatasetParams {
  std::vector<int> dims{64, 64};
  int pairs = 20;
  std::uint64_t seed = 7;
  double magnitude = 3.0;
  double smoothness_scale = 8.0;
  int complexity = 2;
};

/// All pairs for one dataset; pair i uses seeds derived from (seed, i).
std::vector<RegistrationPair> generate_pairs(const DatasetParams& params);

/// Writes pairs plus a manifest.json naming every file.
void write_dataset(const std::filesystem::path& dir, const DatasetParams& params,
                   const std::vector<RegistrationPair>& pairs);

struct LoadedDataset {
  DatasetParams params;
  std::vector<RegistrationPair> pairs;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

/// Half-resolution clean fields for denoiser training, statistically matched
/// to the fields the registration loop optimizes at half resolution.
std::vector<RegistrationField> synthetic_clean_fields(
    const std::vector<int>& full_dims, int count, std::uint64_t seed,
    double magnitude, double smoothness_scale);

/// Pairs each clean field with an additive-Gaussian-noise observation of
/// standard deviation sigma.
std::vector<NoisyFieldSample> make_denoiser_dataset(
    const std::vector<RegistrationField>& clean_fields, double sigma,
    std::uint64_t seed);

}  // namespace pirate
