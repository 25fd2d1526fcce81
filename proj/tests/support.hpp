#pragma once

// Shared helpers for the test suites: deterministic random grids quantized so
// finite-difference probes are exact in float, plus the finite-difference
// oracles themselves. Oracles here are independent of the gradient code they
// check; they only call the scalar-valued objectives.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "pirate/common.hpp"
#include "pirate/grid.hpp"

namespace testsupport {

// Quantum used for test data so that value +/- step is exact in float.
inline constexpr double kQuantum = 0x1.0p-10;
inline constexpr double kFdStep = 0x1.0p-10;

inline double quantize(double v) { return std::round(v / kQuantum) * kQuantum; }

inline pirate::Volume random_volume(const std::vector<int>& dims,
                                    std::uint64_t seed, double lo = 0.05,
                                    double hi = 0.95) {
  pirate::Volume v = pirate::Volume::zeros(dims);
  pirate::Rng rng(seed);
  for (auto& s : v.data) s = static_cast<float>(quantize(rng.uniform(lo, hi)));
  return v;
}

// Displacements with magnitude in [lo, hi] and random sign, quantized. The
// default range keeps every sample coordinate away from voxel-cell edges and
// clamp corners so central differences stay inside one interpolation cell.
inline pirate::RegistrationField random_field(const std::vector<int>& dims,
                                              std::uint64_t seed, double lo = 0.1,
                                              double hi = 0.4) {
  auto f = pirate::RegistrationField::zeros(dims);
  pirate::Rng rng(seed);
  for (auto& s : f.data) {
    const double mag = rng.uniform(lo, hi);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    s = static_cast<float>(quantize(sign * mag));
  }
  return f;
}

inline double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double vector_relative_error(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double scale = std::max(l2_norm(a), l2_norm(b));
  if (scale == 0.0) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

// Entries to probe: (voxel, channel) pairs spread over the field.
inline std::vector<std::pair<std::size_t, int>> sampled_entries(
    const pirate::RegistrationField& f, std::size_t max_count, std::uint64_t seed) {
  pirate::Rng rng(seed);
  std::vector<std::pair<std::size_t, int>> entries;
  const std::size_t n = f.voxels();
  for (std::size_t k = 0; k < max_count; ++k) {
    const auto v = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(n) - 1));
    entries.emplace_back(v, rng.uniform_int(0, f.channels - 1));
  }
  return entries;
}

// Central finite differences of a scalar objective with respect to selected
// field entries. Perturbations are exact because test fields are quantized.
inline std::vector<double> fd_field_gradient(
    const std::function<double(const pirate::RegistrationField&)>& objective,
    const pirate::RegistrationField& field,
    const std::vector<std::pair<std::size_t, int>>& entries,
    double step = kFdStep) {
  std::vector<double> grads;
  grads.reserve(entries.size());
  pirate::RegistrationField probe = field;
  for (const auto& [voxel, channel] : entries) {
    const float original = probe.value(voxel, channel);
    probe.value(voxel, channel) = static_cast<float>(original + step);
    const double plus = objective(probe);
    probe.value(voxel, channel) = static_cast<float>(original - step);
    const double minus = objective(probe);
    probe.value(voxel, channel) = original;
    const double actual =
        static_cast<double>(static_cast<float>(original + step)) -
        static_cast<double>(static_cast<float>(original - step));
    grads.push_back((plus - minus) / actual);
  }
  return grads;
}

inline std::vector<double> gather_entries(
    const pirate::RegistrationField& g,
    const std::vector<std::pair<std::size_t, int>>& entries) {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& [voxel, channel] : entries)
    out.push_back(static_cast<double>(g.value(voxel, channel)));
  return out;
}

}  // namespace testsupport
