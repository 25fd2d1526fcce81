#pragma once

#include "pirate/registration.hpp"

namespace pirate {

// Fine-tuning of the convolutional denoiser through the fixed point of the
// registration iteration. The forward pass solves phi = T(phi) for the
// stationary fixed-step operator; the backward pass is Jacobian-free: the
// loss gradient is pushed through exactly one application of T at the fixed
// point, which for this operator touches only the denoiser term. (The exact
// implicit gradient would additionally solve a linear system in the operator
// Jacobian at the fixed point; the single-application approximation is the
// one implemented here.)

struct DeqConfig {
  double w0 = 1.0;  // windowed-correlation similarity weight
  double w1 = 5.0;  // smoothness weight
  double w2 = 1.0;  // Jacobian loss weight
  double learning_rate = 1e-5;
  int epochs = 50;
  int ncc_window = 5;
  double fp_tolerance = 1e-4;
  int fp_max_iters = 120;
  bool use_anderson = true;
  double jfb_residual_threshold = 1e-2;
  double gamma = 0.0;  // fixed step of the stationary operator; 0 = gamma0

  static DeqConfig desk();
  static DeqConfig paper_scale();
};

struct DeqLossBreakdown {
  double total = 0.0;
  double similarity = 0.0;  // weighted contributions; they sum to total
  double smoothness = 0.0;
  double jacobian = 0.0;
};

/// w0 * ncc + w1 * smoothness + w2 * jacobian_loss, evaluated at full
/// resolution. Zero-weight terms are skipped and contribute exactly zero.
DeqLossBreakdown deq_loss(const RegistrationField& phi_full, const Volume& fixed,
                          const Volume& moving, const DeqConfig& config);

/// Analytic gradient of deq_loss with respect to the full-resolution field.
RegistrationField deq_loss_field_gradient(const RegistrationField& phi_full,
                                          const Volume& fixed, const Volume& moving,
                                          const DeqConfig& config);

struct DeqForward {
  RegistrationField state;  // native-resolution fixed point estimate
  int nfe = 0;              // operator evaluations
  double residual = 0.0;    // last relative residual
  bool diverged = false;
};

/// Solves the fixed point of the stationary registration operator with the
/// given denoiser parameters plugged in.
DeqForward deq_forward(const DenoiserParameters& params, const Volume& fixed,
                       const Volume& moving, const PirateConfig& pirate_config,
                       const DeqConfig& config);

struct JfbGradient {
  std::vector<double> values;  // one per denoiser parameter
  double residual = 0.0;       // relative residual of T at phi
  bool fixed_point_valid = false;
};

/// Jacobian-free parameter gradient at a (near-)fixed point phi_state. The
/// residual is measured and the gradient flagged when it exceeds the
/// configured threshold, since the approximation degrades away from the
/// fixed point.
JfbGradient jfb_gradient(const DenoiserParameters& params,
                         const RegistrationField& phi_state, const Volume& fixed,
                         const Volume& moving, const PirateConfig& pirate_config,
                         const DeqConfig& config);

struct FinetuneLogRow {
  int epoch = 0;
  int pair = 0;
  double loss = 0.0;
  double similarity = 0.0;
  double smoothness = 0.0;
  double jacobian = 0.0;
  int nfe = 0;
  double wall_time_sec = 0.0;
  bool skipped = false;  // forward solve diverged; pair logged, not trained on
};

struct FinetuneResult {
  DenoiserParameters params;
  AdamState adam;
  std::vector<FinetuneLogRow> log;
  int skipped = 0;
};

/// Per pair and epoch: forward fixed-point solve, Jacobian-free gradient,
/// one Adam update. Diverged pairs are skipped and logged.
FinetuneResult finetune(const std::vector<RegistrationPair>& pairs,
                        const DenoiserParameters& initial, const DeqConfig& config,
                        const PirateConfig& pirate_config);

void write_finetune_log_csv(const std::filesystem::path& path,
                            const std::vector<FinetuneLogRow>& log);

}  // namespace pirate
