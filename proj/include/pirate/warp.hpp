#pragma once

#include "pirate/grid.hpp"

namespace pirate {

/// Warps the moving image: output(x) = multilinear sample of m at x + u(x).
/// Sample coordinates are clamped to the image boundary.
Volume warp(const Volume& moving, const RegistrationField& field);

/// Per-voxel derivative of warp(m, field)(x) with respect to the displacement
/// vector u(x): the exact slope of the multilinear interpolant inside the
/// sampled cell, zero where the coordinate is clamped. This is the chain-rule
/// factor for every similarity gradient taken with respect to the field.
RegistrationField warp_displacement_gradient(const Volume& moving,
                                             const RegistrationField& field);

/// One pass computing both of the above.
void warp_with_gradient(const Volume& moving, const RegistrationField& field,
                        Volume& warped, RegistrationField& gradient);

/// Nearest-neighbor warp for segmentation labels; labels are never blended.
/// Ties round half away from zero.
LabelMask warp_mask(const LabelMask& mask, const RegistrationField& field);

}  // namespace pirate
