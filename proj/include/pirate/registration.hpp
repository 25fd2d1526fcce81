#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pirate/data.hpp"
#include "pirate/denoiser.hpp"
#include "pirate/metrics.hpp"
#include "pirate/solver.hpp"

namespace pirate {

// The registration iteration: a gradient-style update assembled from the
// similarity penalty, the smoothness regularizer and a denoiser residual,
//   phi <- phi - gamma_t * (grad_g + alpha * grad_r + tau * (phi - D(phi))).
// Ablation variants switch individual terms: P = penalty only, R = pre-trained
// denoiser, S = smoothness, D = fine-tuned denoiser.

enum class Variant { P, PR, PS, PD, PRS, PDS };

Variant parse_variant(const std::string& name);  // "P", "P+R", "P+R+S", ...
std::string variant_name(Variant variant);
bool variant_uses_denoiser(Variant variant);
bool variant_uses_finetuned(Variant variant);

struct TermSwitches {
  bool penalty = true;
  bool smoothness = true;
  bool denoiser = true;
};

struct PirateConfig {
  double gamma0 = 400.0;
  double alpha = 1.0;
  double tau = 5e-3;
  int t_max = 150;
  StepSchedule::Mode schedule = StepSchedule::Mode::cosine;
  bool downsample = true;  // iterate lives at half resolution
  DenoiserKind denoiser = TvDenoiser{0.3, 40};
  TermSwitches terms;
  double stop_tolerance = 1e-6;  // relative update norm
  bool use_anderson = false;     // fixed schedule only
  AndersonConfig anderson;
  int ncc_window = 5;

  /// Defaults sized for the synthetic 64x64 phantoms; chosen by the pilot
  /// parameter scan in tools/pilot.cpp.
  static PirateConfig desk();
  /// Hyperparameters used for full-scale brain MRI runs; the step size is
  /// tied to unnormalized gradients at that scale and is far too large for
  /// the synthetic phantoms.
  static PirateConfig paper_scale();

  StepSchedule step_schedule() const {
    return StepSchedule{gamma0, t_max, schedule};
  }

  /// Applies a variant's term switches and denoiser selection. Variants with
  /// R need `pretrained`, variants with D need `finetuned`.
  void apply_variant(Variant variant, const DenoiserKind* pretrained,
                     const DenoiserKind* finetuned);
};

struct TermGradients {
  RegistrationField penalty;
  RegistrationField smoothness;
  RegistrationField denoiser_residual;
};

/// The three unweighted update terms at the field's own resolution. With
/// downsampling on, the penalty gradient is evaluated at full resolution
/// through the upsampled field and pulled back by the exact adjoint of the
/// upsampler. Disabled terms are identically zero.
TermGradients pirate_term_gradients(const RegistrationField& phi,
                                    const Volume& fixed, const Volume& moving,
                                    const PirateConfig& config);

/// One update step with the schedule's step size at iteration t.
RegistrationField pirate_update(const RegistrationField& phi, const Volume& fixed,
                                const Volume& moving, const PirateConfig& config,
                                int t);

struct TraceRow {
  int iteration = 0;
  double gcc_value = 0.0;
  double smoothness_value = 0.0;
  double jacobian_loss_value = 0.0;
  double negative_jd = 0.0;
  double step = 0.0;
};

struct RegistrationResult {
  RegistrationField field;  // full-resolution field, ready to apply
  RegistrationField state;  // native-resolution iterate
  std::vector<TraceRow> trace;
  bool diverged = false;
  bool converged = false;
  int iterations = 0;
};

/// Runs the iteration from the identity transform until the relative update
/// norm drops below stop_tolerance or t_max is reached. Trace rows record the
/// objective pieces of the applied field before every update plus a final row.
RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                 const PirateConfig& config);

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace);

struct PairMetrics {
  double dsc_before = 0.0;
  double dsc_after = 0.0;
  double gcc_before = 0.0;
  double gcc_after = 0.0;
  double negative_jd = 0.0;
  double jacobian_loss_value = 0.0;
  double runtime_sec = 0.0;
  int iterations = 0;
  bool diverged = false;
};

/// Registers moving onto fixed and scores the result against the masks.
PairMetrics evaluate_pair(const RegistrationPair& pair, const PirateConfig& config);

struct AblationRow {
  std::string variant;
  double dsc_mean = 0.0;
  double dsc_variance = 0.0;
  double neg_jd_mean = 0.0;
  double neg_jd_variance = 0.0;
  double gcc_mean = 0.0;
  double runtime_mean_sec = 0.0;
};

/// Runs every requested variant over the pairs and aggregates mean and
/// population variance per metric. `threads` caps pair-level parallelism;
/// results are identical for any thread count.
std::vector<AblationRow> ablation_suite(const std::vector<RegistrationPair>& pairs,
                                        const PirateConfig& base,
                                        const DenoiserKind* pretrained,
                                        const DenoiserKind* finetuned,
                                        const std::vector<Variant>& variants,
                                        int threads = 1);

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows);

struct SelectionRow {
  double sigma = 0.0;
  double mean_dsc = 0.0;
};

struct SelectionResult {
  std::size_t best_index = 0;
  std::vector<SelectionRow> table;
};

/// Scores each candidate denoiser by the mean validation DSC of a P+R+S run
/// and returns the argmax. Non-finite scores rank last.
SelectionResult select_denoiser(const std::vector<TrainedDenoiser>& candidates,
                                const std::vector<RegistrationPair>& validation,
                                const PirateConfig& base, int threads = 1);

}  // namespace pirate
