#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "pirate/common.hpp"

namespace pirate {

// Fixed-point machinery shared by the registration loop and DEQ training,
// plus the Adam optimizer used by all training code. Solvers work on flat
// double vectors; callers adapt their field types.

struct StepSchedule {
  enum class Mode { fixed, cosine };
  double gamma0 = 1.0;
  int t_max = 1;
  Mode mode = Mode::cosine;
};

/// Step size at iteration t. Cosine mode anneals from gamma0 at t = 0 to
/// exactly 0 at t = t_max; fixed mode always returns gamma0.
double step_size(const StepSchedule& schedule, int t);

struct AndersonConfig {
  int memory = 5;
  double beta = 1.0;
  double regularization = 1e-8;  // Tikhonov weight for the mixing solve
  int max_iters = 500;
  double tolerance = 1e-4;  // relative residual
};

enum class FixedPointMode { plain, anderson };

struct FixedPointResult {
  std::vector<double> state;
  std::vector<double> residual_history;  // one entry per operator evaluation
  int iterations = 0;                    // operator evaluations performed
  bool converged = false;
  bool diverged = false;  // non-finite iterate; state holds the last finite one
};

/// Iterates x <- T(x) until the relative residual ||T(x) - x|| / max(||x||, 1)
/// drops below the tolerance or max_iters is reached. Anderson mode mixes the
/// last `memory` residuals through a regularized least-squares solve and falls
/// back to a plain step whenever that solve is unusable. Divergence is always
/// flagged, never silently returned.
FixedPointResult fixed_point(
    const std::function<std::vector<double>(const std::vector<double>&)>& op,
    std::vector<double> x0, const AndersonConfig& config,
    FixedPointMode mode = FixedPointMode::anderson);

/// Writes "iteration,residual,objective" rows; pass an empty objective vector
/// if no objective was tracked.
void write_residual_csv(const std::filesystem::path& path,
                        const std::vector<double>& residuals,
                        const std::vector<double>& objectives = {});

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  int step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update in place. Moment vectors are sized on first
/// use and must keep their length afterwards.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, double learning_rate,
               const AdamConfig& config = {});

}  // namespace pirate
