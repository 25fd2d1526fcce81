#include "pirate/warp.hpp"

#include <algorithm>
#include <cmath>

namespace pirate {

static void check_warp_shapes(const std::vector<int>& image_dims,
                              const RegistrationField& field) {
  if (image_dims != field.dims)
    throw std::invalid_argument("warp: image and field dims differ");
  if (field.channels != static_cast<int>(field.dims.size()))
    throw std::invalid_argument("warp: field channels must equal rank");
}

namespace {

struct CellSample {
  int base[3];
  double weight[3];
  bool interior[3];  // false where the coordinate was clamped
};

inline void locate(const std::vector<int>& dims, const double* p, CellSample& s) {
  for (std::size_t a = 0; a < dims.size(); ++a) {
    const double ext = static_cast<double>(dims[a]);
    const double pc = std::clamp(p[a], 0.0, ext - 1.0);
    int i = static_cast<int>(std::floor(pc));
    i = std::min(i, dims[a] - 2);
    if (i < 0) i = 0;
    s.base[a] = i;
    s.weight[a] = dims[a] == 1 ? 0.0 : pc - static_cast<double>(i);
    s.interior[a] = p[a] > 0.0 && p[a] < ext - 1.0;
  }
}

}  // namespace

void warp_with_gradient(const Volume& moving, const RegistrationField& field,
                        Volume& warped, RegistrationField& gradient) {
  check_warp_shapes(moving.dims, field);
  if (!all_finite(field.data))
    throw std::invalid_argument("warp: field has non-finite displacements");

  const int rank = field.rank();
  const auto strides = row_major_strides(moving.dims);
  warped = Volume::zeros(moving.dims);
  gradient = RegistrationField::zeros(moving.dims);

  const std::size_t n = moving.size();
  std::vector<int> coord(moving.dims.size());
  double p[3];
  CellSample cell;
  const int corners = 1 << rank;
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, moving.dims, coord.data());
    for (int a = 0; a < rank; ++a)
      p[a] = static_cast<double>(coord[a]) + static_cast<double>(field.value(v, a));
    locate(moving.dims, p, cell);

    double value = 0.0;
    double slope[3] = {0.0, 0.0, 0.0};
    for (int mask = 0; mask < corners; ++mask) {
      std::size_t voxel = 0;
      double w = 1.0;
      for (int a = 0; a < rank; ++a) {
        const int bit = (mask >> a) & 1;
        w *= bit ? cell.weight[a] : 1.0 - cell.weight[a];
        voxel += static_cast<std::size_t>(cell.base[a] + bit) * strides[a];
      }
      const double sample = static_cast<double>(moving.data[voxel]);
      value += w * sample;
      for (int a = 0; a < rank; ++a) {
        double dw = (mask >> a) & 1 ? 1.0 : -1.0;
        for (int b = 0; b < rank; ++b) {
          if (b == a) continue;
          dw *= (mask >> b) & 1 ? cell.weight[b] : 1.0 - cell.weight[b];
        }
        slope[a] += dw * sample;
      }
    }
    warped.data[v] = static_cast<float>(value);
    for (int a = 0; a < rank; ++a)
      gradient.value(v, a) = static_cast<float>(cell.interior[a] ? slope[a] : 0.0);
  }
}

Volume warp(const Volume& moving, const RegistrationField& field) {
  check_warp_shapes(moving.dims, field);
  if (!all_finite(field.data))
    throw std::invalid_argument("warp: field has non-finite displacements");

  const int rank = field.rank();
  const auto strides = row_major_strides(moving.dims);
  Volume out = Volume::zeros(moving.dims);
  const std::size_t n = moving.size();
  std::vector<int> coord(moving.dims.size());
  double p[3];
  CellSample cell;
  const int corners = 1 << rank;
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, moving.dims, coord.data());
    for (int a = 0; a < rank; ++a)
      p[a] = static_cast<double>(coord[a]) + static_cast<double>(field.value(v, a));
    locate(moving.dims, p, cell);
    double value = 0.0;
    for (int mask = 0; mask < corners; ++mask) {
      std::size_t voxel = 0;
      double w = 1.0;
      for (int a = 0; a < rank; ++a) {
        const int bit = (mask >> a) & 1;
        w *= bit ? cell.weight[a] : 1.0 - cell.weight[a];
        voxel += static_cast<std::size_t>(cell.base[a] + bit) * strides[a];
      }
      value += w * static_cast<double>(moving.data[voxel]);
    }
    out.data[v] = static_cast<float>(value);
  }
  return out;
}

RegistrationField warp_displacement_gradient(const Volume& moving,
                                             const RegistrationField& field) {
  Volume warped;
  RegistrationField gradient;
  warp_with_gradient(moving, field, warped, gradient);
  return gradient;
}

LabelMask warp_mask(const LabelMask& mask, const RegistrationField& field) {
  check_warp_shapes(mask.dims, field);
  if (!all_finite(field.data))
    throw std::invalid_argument("warp_mask: field has non-finite displacements");

  const int rank = field.rank();
  const auto strides = row_major_strides(mask.dims);
  LabelMask out = LabelMask::zeros(mask.dims);
  const std::size_t n = mask.size();
  std::vector<int> coord(mask.dims.size());
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, mask.dims, coord.data());
    std::size_t voxel = 0;
    for (int a = 0; a < rank; ++a) {
      const double ext = static_cast<double>(mask.dims[a]);
      const double p = std::clamp(
          static_cast<double>(coord[a]) + static_cast<double>(field.value(v, a)),
          0.0, ext - 1.0);
      const int idx = std::clamp(static_cast<int>(std::llround(p)), 0, mask.dims[a] - 1);
      voxel += static_cast<std::size_t>(idx) * strides[a];
    }
    out.labels[v] = mask.labels[voxel];
  }
  return out;
}

}  // namespace pirate
