#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include "pirate/grid.hpp"
#include "pirate/solver.hpp"

namespace pirate {

// Pluggable field denoisers used as the implicit prior in the registration
// iteration: total variation, Gaussian smoothing, and a small residual
// convolutional network with explicit forward and backward passes.

/// Fixed number of dual projection iterations minimizing
/// 0.5 * ||x - z||^2 + lambda * TV(x), isotropic TV per channel.
struct TvDenoiser {
  double lambda = 0.1;
  int iterations = 60;
};

/// Separable Gaussian blur per channel.
struct GaussianDenoiser {
  double sigma_blur = 1.0;
};

struct ConvLayerShape {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<int> kernel;  // odd extents per spatial axis
};

/// Parameters of the residual network: conv -> ReLU repeated, a final conv,
/// output = z - residual. Weights for layer l are packed as
/// values[offset + (tap * in + i) * out + o], biases follow the weights.
struct DenoiserParameters {
  int spatial_rank = 0;
  std::vector<ConvLayerShape> layers;
  std::vector<double> values;

  std::size_t layer_weight_count(std::size_t layer) const;
  std::size_t layer_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  std::size_t total_values() const;
  void validate() const;

  /// conv chain rank -> hidden... -> rank. He-initialized except the final
  /// layer, which starts at zero so the untouched net is the identity
  /// denoiser.
  static DenoiserParameters create(int spatial_rank,
                                   const std::vector<int>& hidden_channels,
                                   int kernel_extent, std::uint64_t seed);

  /// 4 conv layers, 16 hidden channels, 3^D kernels.
  static DenoiserParameters desk_default(int spatial_rank, std::uint64_t seed);
};

struct ConvNetDenoiser {
  DenoiserParameters params;
};

using DenoiserKind = std::variant<TvDenoiser, GaussianDenoiser, ConvNetDenoiser>;

/// Applies the denoiser; output has the shape of the input.
RegistrationField denoise(const DenoiserKind& denoiser, const RegistrationField& z);

/// Activations recorded by the forward pass, enough to audit tiny nets by
/// hand: the input of each conv layer and its pre-activation output.
struct ConvNetTrace {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> pre_activations;
};

RegistrationField convnet_forward(const DenoiserParameters& params,
                                  const RegistrationField& z,
                                  ConvNetTrace* trace = nullptr);

/// Exact gradient of <upstream, convnet_forward(params, z)> with respect to
/// every weight and bias. Layers flagged in frozen_layers get zero gradient.
std::vector<double> convnet_param_gradient(
    const DenoiserParameters& params, const RegistrationField& z,
    const RegistrationField& upstream,
    const std::vector<bool>* frozen_layers = nullptr);

/// Same objective, gradient with respect to the input z.
RegistrationField convnet_input_gradient(const DenoiserParameters& params,
                                         const RegistrationField& z,
                                         const RegistrationField& upstream);

struct DenoiserTrainingConfig {
  double sigma = 0.3;  // noise std of the dataset this denoiser targets
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 4;
  std::uint64_t seed = 0;
};

struct TrainingLog {
  std::vector<double> epoch_loss;
};

/// Trained parameters plus everything needed to resume the run exactly.
struct TrainedDenoiser {
  DenoiserParameters params;
  AdamState adam;
  TrainingLog log;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  int epoch = 0;  // epochs completed
};

/// Minimizes the MSE between denoise(noisy) and clean with Adam. Deterministic
/// under the config seed; per-epoch shuffles are derived from seed and epoch
/// index, so resuming from a checkpoint reproduces the uninterrupted
/// trajectory. Throws divergence_error if the loss becomes non-finite.
TrainedDenoiser train_denoiser(const std::vector<NoisyFieldSample>& dataset,
                               const DenoiserTrainingConfig& config,
                               const TrainedDenoiser* resume_from = nullptr);

/// Checkpoint: JSON manifest plus raw little-endian float64 payload holding
/// parameters and Adam moments. Round trips are bit-exact.
void write_checkpoint(const TrainedDenoiser& denoiser,
                      const std::filesystem::path& header_path);
TrainedDenoiser read_checkpoint(const std::filesystem::path& header_path);

/// Mean squared error per element between same-shape fields.
double field_mse(const RegistrationField& a, const RegistrationField& b);

/// Closed-form posterior mean for a Gaussian prior N(mean, covariance) under
/// additive Gaussian noise of std sigma, plus the scaled score
/// sigma^2 * (covariance + sigma^2 I)^{-1} (z - mean). The residual
/// z - denoised equals the score exactly; kept as a small-dimension oracle
/// for the residual/score identity of MMSE denoisers.
struct MmseResult {
  std::vector<double> denoised;
  std::vector<double> score;
};

MmseResult mmse_gaussian_oracle(const std::vector<double>& mean,
                                const std::vector<double>& covariance,
                                double sigma, const std::vector<double>& z);

}  // namespace pirate
