#include "pirate/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace pirate {

Variant parse_variant(const std::string& name) {
  if (name == "P") return Variant::P;
  if (name == "P+R") return Variant::PR;
  if (name == "P+S") return Variant::PS;
  if (name == "P+D") return Variant::PD;
  if (name == "P+R+S") return Variant::PRS;
  if (name == "P+D+S") return Variant::PDS;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected P, P+R, P+S, P+D, P+R+S or P+D+S)");
}

std::string variant_name(Variant variant) {
  switch (variant) {
    case Variant::P: return "P";
    case Variant::PR: return "P+R";
    case Variant::PS: return "P+S";
    case Variant::PD: return "P+D";
    case Variant::PRS: return "P+R+S";
    case Variant::PDS: return "P+D+S";
  }
  return "?";
}

bool variant_uses_denoiser(Variant variant) {
  return variant == Variant::PR || variant == Variant::PD ||
         variant == Variant::PRS || variant == Variant::PDS;
}

bool variant_uses_finetuned(Variant variant) {
  return variant == Variant::PD || variant == Variant::PDS;
}

PirateConfig PirateConfig::desk() {
  PirateConfig cfg;
  cfg.gamma0 = 400.0;
  cfg.alpha = 1.0;
  cfg.tau = 5e-3;
  cfg.t_max = 150;
  cfg.schedule = StepSchedule::Mode::cosine;
  cfg.downsample = true;
  cfg.denoiser = TvDenoiser{0.3, 40};
  cfg.stop_tolerance = 1e-6;
  cfg.ncc_window = 5;
  return cfg;
}

PirateConfig PirateConfig::paper_scale() {
  PirateConfig cfg;
  cfg.gamma0 = 5e5;
  cfg.alpha = 5e-1;
  cfg.tau = 1e-7;
  cfg.t_max = 500;
  cfg.schedule = StepSchedule::Mode::cosine;
  cfg.downsample = true;
  cfg.stop_tolerance = 1e-6;
  cfg.ncc_window = 9;
  return cfg;
}

void PirateConfig::apply_variant(Variant variant, const DenoiserKind* pretrained,
                                 const DenoiserKind* finetuned) {
  terms.penalty = true;
  terms.smoothness = variant == Variant::PS || variant == Variant::PRS ||
                     variant == Variant::PDS;
  terms.denoiser = variant_uses_denoiser(variant);
  if (!terms.denoiser) return;
  const DenoiserKind* chosen =
      variant_uses_finetuned(variant) ? finetuned : pretrained;
  if (!chosen)
    throw std::invalid_argument("variant " + variant_name(variant) +
                                " requires a " +
                                (variant_uses_finetuned(variant)
                                     ? std::string("fine-tuned")
                                     : std::string("pre-trained")) +
                                " denoiser");
  denoiser = *chosen;
}

// ---------------------------------------------------------------------------

namespace {

void check_pair_shapes(const Volume& fixed, const Volume& moving) {
  if (fixed.dims != moving.dims)
    throw std::invalid_argument("register: fixed and moving dims differ");
  if (!all_finite(fixed.data) || !all_finite(moving.data))
    throw std::invalid_argument("register: non-finite intensities");
}

std::vector<int> state_dims(const Volume& fixed, const PirateConfig& config) {
  return config.downsample ? half_dims(fixed.dims) : fixed.dims;
}

RegistrationField to_full(const RegistrationField& state, const Volume& fixed,
                          const PirateConfig& config) {
  if (!config.downsample) return state;
  return upsample_field(state, fixed.dims);
}

}  // namespace

TermGradients pirate_term_gradients(const RegistrationField& phi,
                                    const Volume& fixed, const Volume& moving,
                                    const PirateConfig& config) {
  check_pair_shapes(fixed, moving);
  if (phi.dims != state_dims(fixed, config))
    throw std::invalid_argument("pirate_term_gradients: field resolution mismatch");

  TermGradients out;
  out.penalty = RegistrationField::zeros(phi.dims);
  out.smoothness = RegistrationField::zeros(phi.dims);
  out.denoiser_residual = RegistrationField::zeros(phi.dims);

  if (config.terms.penalty) {
    if (config.downsample) {
      const RegistrationField full = upsample_field(phi, fixed.dims);
      const RegistrationField g_full = gcc_gradient(fixed, moving, full);
      out.penalty = upsample_field_adjoint(g_full, phi.dims);
    } else {
      out.penalty = gcc_gradient(fixed, moving, phi);
    }
  }
  if (config.terms.smoothness) out.smoothness = smoothness_gradient(phi);
  if (config.terms.denoiser) {
    const RegistrationField denoised = denoise(config.denoiser, phi);
    for (std::size_t i = 0; i < phi.data.size(); ++i)
      out.denoiser_residual.data[i] =
          static_cast<float>(static_cast<double>(phi.data[i]) -
                             static_cast<double>(denoised.data[i]));
  }
  return out;
}

RegistrationField pirate_update(const RegistrationField& phi, const Volume& fixed,
                                const Volume& moving, const PirateConfig& config,
                                int t) {
  const double gamma = step_size(config.step_schedule(), t);
  const TermGradients g = pirate_term_gradients(phi, fixed, moving, config);
  RegistrationField next = RegistrationField::zeros(phi.dims);
  for (std::size_t i = 0; i < phi.data.size(); ++i) {
    const double direction = static_cast<double>(g.penalty.data[i]) +
                             config.alpha * static_cast<double>(g.smoothness.data[i]) +
                             config.tau *
                                 static_cast<double>(g.denoiser_residual.data[i]);
    next.data[i] = static_cast<float>(static_cast<double>(phi.data[i]) -
                                      gamma * direction);
  }
  return next;
}

namespace {

TraceRow make_trace_row(int iteration, const RegistrationField& full,
                        const Volume& fixed, const Volume& moving, double step) {
  TraceRow row;
  row.iteration = iteration;
  row.gcc_value = gcc(fixed, warp(moving, full));
  row.smoothness_value = smoothness(full);
  row.jacobian_loss_value = jacobian_loss(full);
  row.negative_jd = negative_jd_ratio(jacobian_map(full));
  row.step = step;
  return row;
}

double relative_update_norm(const RegistrationField& prev,
                            const RegistrationField& next) {
  double diff = 0.0, base = 0.0;
  for (std::size_t i = 0; i < prev.data.size(); ++i) {
    const double d = static_cast<double>(next.data[i]) - prev.data[i];
    diff += d * d;
    base += static_cast<double>(prev.data[i]) * prev.data[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(base), 1.0);
}

}  // namespace

RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                 const PirateConfig& config) {
  check_pair_shapes(fixed, moving);
  if (config.gamma0 <= 0.0 || config.alpha < 0.0 || config.tau < 0.0 ||
      config.t_max < 1)
    throw std::invalid_argument("register: invalid configuration");

  RegistrationResult result;
  RegistrationField state = RegistrationField::zeros(state_dims(fixed, config));

  if (config.use_anderson) {
    if (config.schedule != StepSchedule::Mode::fixed)
      throw std::invalid_argument(
          "register: the accelerated path needs a fixed step schedule");
    const std::size_t dim = state.data.size();
    auto op = [&](const std::vector<double>& x) {
      RegistrationField phi = state;
      for (std::size_t i = 0; i < dim; ++i)
        phi.data[i] = static_cast<float>(x[i]);
      RegistrationField next = pirate_update(phi, fixed, moving, config, 0);
      return std::vector<double>(next.data.begin(), next.data.end());
    };
    AndersonConfig solver_cfg = config.anderson;
    solver_cfg.max_iters = config.t_max;
    result.trace.push_back(
        make_trace_row(0, to_full(state, fixed, config), fixed, moving,
                       config.gamma0));
    FixedPointResult fp = fixed_point(op, std::vector<double>(dim, 0.0), solver_cfg,
                                      FixedPointMode::anderson);
    for (std::size_t i = 0; i < dim; ++i)
      state.data[i] = static_cast<float>(fp.state[i]);
    result.diverged = fp.diverged;
    result.converged = fp.converged;
    result.iterations = fp.iterations;
    result.field = to_full(state, fixed, config);
    result.state = std::move(state);
    result.trace.push_back(make_trace_row(result.iterations, result.field, fixed,
                                          moving, 0.0));
    return result;
  }

  for (int t = 0; t < config.t_max; ++t) {
    const double gamma = step_size(config.step_schedule(), t);
    result.trace.push_back(
        make_trace_row(t, to_full(state, fixed, config), fixed, moving, gamma));
    RegistrationField next = pirate_update(state, fixed, moving, config, t);
    ++result.iterations;
    if (!all_finite(next.data)) {
      result.diverged = true;
      break;
    }
    const double rel = relative_update_norm(state, next);
    state = std::move(next);
    if (rel < config.stop_tolerance) {
      result.converged = true;
      break;
    }
  }

  result.field = to_full(state, fixed, config);
  result.state = std::move(state);
  result.trace.push_back(
      make_trace_row(result.iterations, result.field, fixed, moving, 0.0));
  return result;
}

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "iteration,gcc,smoothness,jac_loss,neg_jd_ratio,step_size\n";
  out.precision(17);
  for (const TraceRow& row : trace)
    out << row.iteration << ',' << row.gcc_value << ',' << row.smoothness_value
        << ',' << row.jacobian_loss_value << ',' << row.negative_jd << ','
        << row.step << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

PairMetrics evaluate_pair(const RegistrationPair& pair, const PirateConfig& config) {
  PairMetrics metrics;
  metrics.dsc_before = dsc(pair.fixed_mask, pair.moving_mask).mean;
  metrics.gcc_before = gcc(pair.fixed, pair.moving);

  const auto start = std::chrono::steady_clock::now();
  const RegistrationResult result = register_pair(pair.fixed, pair.moving, config);
  metrics.runtime_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  const LabelMask warped_mask = warp_mask(pair.moving_mask, result.field);
  metrics.dsc_after = dsc(pair.fixed_mask, warped_mask).mean;
  metrics.gcc_after = gcc(pair.fixed, warp(pair.moving, result.field));
  metrics.negative_jd = negative_jd_ratio(jacobian_map(result.field));
  metrics.jacobian_loss_value = jacobian_loss(result.field);
  metrics.iterations = result.iterations;
  metrics.diverged = result.diverged;
  return metrics;
}

namespace {

// Deterministic pair-level parallelism: every pair writes its own slot.
void parallel_over_pairs(std::size_t count, int threads,
                         const std::function<void(std::size_t)>& work) {
  const int usable = std::max(1, threads);
  if (usable == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex mutex;
  for (int t = 0; t < std::min<std::size_t>(usable, count); ++t)
    pool.emplace_back([&] {
      while (true) {
        std::size_t index;
        {
          std::lock_guard<std::mutex> lock(mutex);
          if (next >= count) return;
          index = next++;
        }
        work(index);
      }
    });
  for (std::thread& t : pool) t.join();
}

}  // namespace

std::vector<AblationRow> ablation_suite(const std::vector<RegistrationPair>& pairs,
                                        const PirateConfig& base,
                                        const DenoiserKind* pretrained,
                                        const DenoiserKind* finetuned,
                                        const std::vector<Variant>& variants,
                                        int threads) {
  if (pairs.empty()) throw std::invalid_argument("ablation_suite: no pairs");
  std::vector<AblationRow> rows;
  for (Variant variant : variants) {
    PirateConfig cfg = base;
    cfg.apply_variant(variant, pretrained, finetuned);

    std::vector<PairMetrics> metrics(pairs.size());
    parallel_over_pairs(pairs.size(), threads, [&](std::size_t i) {
      metrics[i] = evaluate_pair(pairs[i], cfg);
    });

    AblationRow row;
    row.variant = variant_name(variant);
    const double n = static_cast<double>(pairs.size());
    for (const PairMetrics& m : metrics) {
      row.dsc_mean += m.dsc_after / n;
      row.neg_jd_mean += m.negative_jd / n;
      row.gcc_mean += m.gcc_after / n;
      row.runtime_mean_sec += m.runtime_sec / n;
    }
    for (const PairMetrics& m : metrics) {
      row.dsc_variance += (m.dsc_after - row.dsc_mean) *
                          (m.dsc_after - row.dsc_mean) / n;
      row.neg_jd_variance += (m.negative_jd - row.neg_jd_mean) *
                             (m.negative_jd - row.neg_jd_mean) / n;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "variant,dsc_mean,dsc_variance,neg_jd_mean,neg_jd_variance,gcc_mean,"
         "runtime_mean_sec\n";
  out.precision(17);
  for (const AblationRow& row : rows)
    out << row.variant << ',' << row.dsc_mean << ',' << row.dsc_variance << ','
        << row.neg_jd_mean << ',' << row.neg_jd_variance << ',' << row.gcc_mean
        << ',' << row.runtime_mean_sec << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

SelectionResult select_denoiser(const std::vector<TrainedDenoiser>& candidates,
                                const std::vector<RegistrationPair>& validation,
                                const PirateConfig& base, int threads) {
  if (candidates.empty())
    throw std::invalid_argument("select_denoiser: no candidates");
  SelectionResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    PirateConfig cfg = base;
    DenoiserKind kind = ConvNetDenoiser{candidates[c].params};
    cfg.apply_variant(Variant::PRS, &kind, nullptr);

    std::vector<double> scores(validation.size(), 0.0);
    parallel_over_pairs(validation.size(), threads, [&](std::size_t i) {
      scores[i] = evaluate_pair(validation[i], cfg).dsc_after;
    });
    double mean = 0.0;
    for (double s : scores) mean += s / static_cast<double>(validation.size());
    if (!std::isfinite(mean)) mean = -std::numeric_limits<double>::infinity();
    result.table.push_back({candidates[c].sigma, mean});
    if (mean > best) {
      best = mean;
      result.best_index = c;
    }
  }
  return result;
}

}  // namespace pirate
