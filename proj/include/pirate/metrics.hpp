#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pirate/grid.hpp"
#include "pirate/warp.hpp"

namespace pirate {

// Similarity penalties, the smoothness regularizer, Jacobian-determinant
// quantities, and the evaluation metrics. Scalar objectives are accumulated
// in double with a fixed traversal order so repeated runs agree bitwise.
//
// Correlation denominators are floored at kSigmaFloor so constant inputs do
// not divide by zero; away from that floor the values are plain Pearson
// correlations.
inline constexpr double kSigmaFloor = 1e-5;

/// Global cross correlation penalty: 1 - Pearson(f, w) over the whole image.
/// Range [0, 2]; 0 for perfectly correlated inputs.
double gcc(const Volume& fixed, const Volume& warped);

/// Analytic gradient of gcc(fixed, warp(moving, field)) with respect to the
/// displacement field, chained through the warp.
RegistrationField gcc_gradient(const Volume& fixed, const Volume& moving,
                               const RegistrationField& field);

/// Windowed cross correlation: 1 - mean over voxels of the Pearson
/// correlation inside an odd-sized window centered on each voxel; windows are
/// clipped at the boundary.
double ncc(const Volume& fixed, const Volume& warped, int window);

RegistrationField ncc_gradient(const Volume& fixed, const Volume& moving,
                               const RegistrationField& field, int window);

/// Squared-gradient smoothness: sum over axes and channels of the mean
/// squared forward difference. A field u_a(x) = c * x_a along one axis
/// scores exactly c^2.
double smoothness(const RegistrationField& field);

/// Exact adjoint of the forward-difference stencil used by smoothness.
RegistrationField smoothness_gradient(const RegistrationField& field);

/// Per-voxel determinant of (I + du/dx).
struct JacobianMap {
  std::vector<int> dims;
  std::vector<double> values;
};

/// Forward differences, one-sided at the far boundary so every voxel has a
/// determinant. The same stencil backs jacobian_loss so its gradient is an
/// exact adjoint.
JacobianMap jacobian_map(const RegistrationField& field);

/// Fraction of voxels with negative determinant (folding).
double negative_jd_ratio(const JacobianMap& map);

/// Mean of ReLU(-J)^2 over voxels: penalizes folded voxels only.
double jacobian_loss(const RegistrationField& field);

/// Chain rule through the determinant (cofactors) and the ReLU mask.
RegistrationField jacobian_loss_gradient(const RegistrationField& field);

struct DiceResult {
  std::vector<std::pair<std::uint16_t, double>> per_label;
  double mean = 0.0;
};

/// Dice overlap per label: 2|A and B| / (|A| + |B|). Labels empty in both
/// masks are skipped from the mean. With an empty label list, all non-zero
/// labels present in either mask are scored.
DiceResult dsc(const LabelMask& a, const LabelMask& b,
               const std::vector<std::uint16_t>& labels = {});

}  // namespace pirate
