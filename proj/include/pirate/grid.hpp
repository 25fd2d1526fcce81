#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pirate/common.hpp"

namespace pirate {

// Dense D-dimensional grids, D in {2,3}. Data is row-major with axis 0
// slowest. All types are plain values; treat them as immutable after
// construction so they can be shared across threads.

std::size_t element_count(const std::vector<int>& dims);
std::vector<std::size_t> row_major_strides(const std::vector<int>& dims);
void unravel_index(std::size_t flat, const std::vector<int>& dims, int* coords);

/// Scalar image; intensities are expected in [0,1] for registration inputs.
struct Volume {
  std::vector<int> dims;
  std::vector<float> data;

  static Volume zeros(std::vector<int> dims);
  int rank() const { return static_cast<int>(dims.size()); }
  std::size_t size() const { return data.size(); }
  float at(std::span<const int> idx) const;
  float& at(std::span<const int> idx);
};

/// Dense displacement field u, one D-vector per voxel in units of voxels.
/// Warping samples the moving image at x + u(x). Channels are interleaved:
/// data[voxel * channels + c].
struct RegistrationField {
  std::vector<int> dims;
  int channels = 0;
  std::vector<float> data;

  static RegistrationField zeros(std::vector<int> dims);
  int rank() const { return static_cast<int>(dims.size()); }
  std::size_t voxels() const {
    return channels == 0 ? 0 : data.size() / static_cast<std::size_t>(channels);
  }
  float value(std::size_t voxel, int c) const {
    return data[voxel * static_cast<std::size_t>(channels) + c];
  }
  float& value(std::size_t voxel, int c) {
    return data[voxel * static_cast<std::size_t>(channels) + c];
  }
};

/// Integer segmentation labels, 0 = background.
struct LabelMask {
  std::vector<int> dims;
  std::vector<std::uint16_t> labels;

  static LabelMask zeros(std::vector<int> dims);
  int rank() const { return static_cast<int>(dims.size()); }
  std::size_t size() const { return labels.size(); }
};

/// One denoiser training example: a clean field and its noisy observation.
struct NoisyFieldSample {
  RegistrationField clean;
  RegistrationField noisy;
  double sigma = 0.0;
};

// File I/O. Each grid is stored as a JSON header plus a raw little-endian
// payload next to it; pass the header path (ending in ".json") and the
// payload path is derived by replacing the extension with ".raw".
// Volumes and fields use 32-bit floats, masks 16-bit unsigned. Round trips
// are bit-exact.
void write_volume(const Volume& v, const std::filesystem::path& header_path);
Volume read_volume(const std::filesystem::path& header_path);
void write_field(const RegistrationField& f, const std::filesystem::path& header_path);
RegistrationField read_field(const std::filesystem::path& header_path);
void write_mask(const LabelMask& m, const std::filesystem::path& header_path);
LabelMask read_mask(const std::filesystem::path& header_path);

std::vector<int> half_dims(const std::vector<int>& dims);

/// Decimates a displacement field onto a coarse grid (extents divided by
/// `factor`, rounded up). Values are divided by `factor` so they stay in
/// units of the coarse grid.
RegistrationField downsample_field(const RegistrationField& field, int factor = 2);

/// Multilinear upsampling onto `target_dims`; displacement values are
/// multiplied by the per-axis scale so they stay in units of the fine grid.
RegistrationField upsample_field(const RegistrationField& field,
                                 const std::vector<int>& target_dims);

/// Exact transpose of upsample_field as a linear map: pulls a fine-grid
/// gradient back onto the coarse grid. Needed when optimizing a coarse field
/// through an upsampled evaluation.
RegistrationField upsample_field_adjoint(const RegistrationField& fine_gradient,
                                         const std::vector<int>& source_dims);

/// Separable Gaussian blur of a scalar grid with replicated boundary.
/// Kernel radius is ceil(3 sigma).
std::vector<double> gaussian_blur(const std::vector<double>& data,
                                  const std::vector<int>& dims, double sigma);

}  // namespace pirate
