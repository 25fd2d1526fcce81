#include "pirate/deq.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace pirate {

DeqConfig DeqConfig::desk() {
  DeqConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 10;
  cfg.ncc_window = 5;
  cfg.fp_max_iters = 80;
  return cfg;
}

DeqConfig DeqConfig::paper_scale() {
  DeqConfig cfg;
  cfg.learning_rate = 1e-5;
  cfg.epochs = 50;
  cfg.ncc_window = 9;
  cfg.fp_max_iters = 500;
  return cfg;
}

DeqLossBreakdown deq_loss(const RegistrationField& phi_full, const Volume& fixed,
                          const Volume& moving, const DeqConfig& config) {
  if (phi_full.dims != fixed.dims)
    throw std::invalid_argument("deq_loss: field must live at image resolution");
  DeqLossBreakdown out;
  if (config.w0 != 0.0)
    out.similarity =
        config.w0 * ncc(fixed, warp(moving, phi_full), config.ncc_window);
  if (config.w1 != 0.0) out.smoothness = config.w1 * smoothness(phi_full);
  if (config.w2 != 0.0) out.jacobian = config.w2 * jacobian_loss(phi_full);
  out.total = out.similarity + out.smoothness + out.jacobian;
  return out;
}

RegistrationField deq_loss_field_gradient(const RegistrationField& phi_full,
                                          const Volume& fixed, const Volume& moving,
                                          const DeqConfig& config) {
  if (phi_full.dims != fixed.dims)
    throw std::invalid_argument("deq_loss: field must live at image resolution");
  std::vector<double> acc(phi_full.data.size(), 0.0);
  if (config.w0 != 0.0) {
    const RegistrationField g =
        ncc_gradient(fixed, moving, phi_full, config.ncc_window);
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += config.w0 * static_cast<double>(g.data[i]);
  }
  if (config.w1 != 0.0) {
    const RegistrationField g = smoothness_gradient(phi_full);
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += config.w1 * static_cast<double>(g.data[i]);
  }
  if (config.w2 != 0.0) {
    const RegistrationField g = jacobian_loss_gradient(phi_full);
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += config.w2 * static_cast<double>(g.data[i]);
  }
  RegistrationField out = RegistrationField::zeros(phi_full.dims);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.data[i] = static_cast<float>(acc[i]);
  return out;
}

namespace {

// The stationary operator T used for DEQ: one fixed-step update with the
// given denoiser parameters plugged into the configured iteration.
struct StationaryOperator {
  const Volume& fixed;
  const Volume& moving;
  PirateConfig config;

  StationaryOperator(const DenoiserParameters& params, const Volume& fixed_image,
                     const Volume& moving_image, const PirateConfig& pirate_config,
                     const DeqConfig& deq_config)
      : fixed(fixed_image), moving(moving_image), config(pirate_config) {
    config.denoiser = ConvNetDenoiser{params};
    config.terms.denoiser = true;
    config.schedule = StepSchedule::Mode::fixed;
    if (deq_config.gamma > 0.0) config.gamma0 = deq_config.gamma;
  }

  std::vector<int> state_dims() const {
    return config.downsample ? half_dims(fixed.dims) : fixed.dims;
  }

  RegistrationField apply(const RegistrationField& phi) const {
    return pirate_update(phi, fixed, moving, config, 0);
  }

  std::vector<double> operator()(const std::vector<double>& x) const {
    RegistrationField phi = RegistrationField::zeros(state_dims());
    for (std::size_t i = 0; i < x.size(); ++i)
      phi.data[i] = static_cast<float>(x[i]);
    const RegistrationField next = apply(phi);
    return std::vector<double>(next.data.begin(), next.data.end());
  }
};

}  // namespace

DeqForward deq_forward(const DenoiserParameters& params, const Volume& fixed,
                       const Volume& moving, const PirateConfig& pirate_config,
                       const DeqConfig& config) {
  StationaryOperator op(params, fixed, moving, pirate_config, config);
  RegistrationField state = RegistrationField::zeros(op.state_dims());

  AndersonConfig solver_cfg = pirate_config.anderson;
  solver_cfg.max_iters = config.fp_max_iters;
  solver_cfg.tolerance = config.fp_tolerance;
  const FixedPointResult fp = fixed_point(
      op, std::vector<double>(state.data.size(), 0.0), solver_cfg,
      config.use_anderson ? FixedPointMode::anderson : FixedPointMode::plain);

  DeqForward out;
  for (std::size_t i = 0; i < state.data.size(); ++i)
    state.data[i] = static_cast<float>(fp.state[i]);
  out.state = std::move(state);
  out.nfe = fp.iterations;
  out.residual =
      fp.residual_history.empty() ? 0.0 : fp.residual_history.back();
  out.diverged = fp.diverged;
  return out;
}

JfbGradient jfb_gradient(const DenoiserParameters& params,
                         const RegistrationField& phi_state, const Volume& fixed,
                         const Volume& moving, const PirateConfig& pirate_config,
                         const DeqConfig& config) {
  StationaryOperator op(params, fixed, moving, pirate_config, config);
  if (phi_state.dims != op.state_dims())
    throw std::invalid_argument("jfb_gradient: field resolution mismatch");

  JfbGradient out;

  // How much of a fixed point phi actually is.
  const RegistrationField mapped = op.apply(phi_state);
  double diff = 0.0, base = 0.0;
  for (std::size_t i = 0; i < phi_state.data.size(); ++i) {
    const double d =
        static_cast<double>(mapped.data[i]) - static_cast<double>(phi_state.data[i]);
    diff += d * d;
    base += static_cast<double>(phi_state.data[i]) * phi_state.data[i];
  }
  out.residual = std::sqrt(diff) / std::max(std::sqrt(base), 1.0);
  out.fixed_point_valid = out.residual < config.jfb_residual_threshold;

  // Loss gradient at full resolution, pulled back to the iterate's grid.
  RegistrationField upstream_state;
  if (pirate_config.downsample) {
    const RegistrationField full = upsample_field(phi_state, fixed.dims);
    const RegistrationField g = deq_loss_field_gradient(full, fixed, moving, config);
    upstream_state = upsample_field_adjoint(g, phi_state.dims);
  } else {
    upstream_state = deq_loss_field_gradient(phi_state, fixed, moving, config);
  }

  // Only the denoiser term of T depends on the parameters:
  // dT/dtheta = gamma * tau * dD/dtheta.
  const double scale = op.config.gamma0 * op.config.tau;
  out.values = convnet_param_gradient(params, phi_state, upstream_state);
  for (double& v : out.values) v *= scale;
  return out;
}

FinetuneResult finetune(const std::vector<RegistrationPair>& pairs,
                        const DenoiserParameters& initial, const DeqConfig& config,
                        const PirateConfig& pirate_config) {
  if (pairs.empty()) throw std::invalid_argument("finetune: no pairs");
  initial.validate();
  if (config.epochs < 0) throw std::invalid_argument("finetune: bad epoch count");

  FinetuneResult result;
  result.params = initial;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto start = std::chrono::steady_clock::now();
      const DeqForward forward = deq_forward(result.params, pairs[p].fixed,
                                             pairs[p].moving, pirate_config, config);
      FinetuneLogRow row;
      row.epoch = epoch;
      row.pair = static_cast<int>(p);
      row.nfe = forward.nfe;
      if (forward.diverged) {
        row.skipped = true;
        ++result.skipped;
        row.wall_time_sec = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start)
                                .count();
        result.log.push_back(row);
        continue;
      }

      const RegistrationField full =
          pirate_config.downsample
              ? upsample_field(forward.state, pairs[p].fixed.dims)
              : forward.state;
      const DeqLossBreakdown loss =
          deq_loss(full, pairs[p].fixed, pairs[p].moving, config);
      row.loss = loss.total;
      row.similarity = loss.similarity;
      row.smoothness = loss.smoothness;
      row.jacobian = loss.jacobian;

      const JfbGradient grad = jfb_gradient(result.params, forward.state,
                                            pairs[p].fixed, pairs[p].moving,
                                            pirate_config, config);
      adam_step(result.adam, result.params.values, grad.values,
                config.learning_rate);
      row.wall_time_sec = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - start)
                              .count();
      result.log.push_back(row);
    }
  }
  return result;
}

void write_finetune_log_csv(const std::filesystem::path& path,
                            const std::vector<FinetuneLogRow>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "epoch,pair,loss,ncc_term,smt_term,jac_term,nfe,wall_time,skipped\n";
  out.precision(17);
  for (const FinetuneLogRow& row : log)
    out << row.epoch << ',' << row.pair << ',' << row.loss << ','
        << row.similarity << ',' << row.smoothness << ',' << row.jacobian << ','
        << row.nfe << ',' << row.wall_time_sec << ',' << (row.skipped ? 1 : 0)
        << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace pirate
