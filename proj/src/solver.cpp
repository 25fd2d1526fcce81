#include "pirate/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pirate {

double step_size(const StepSchedule& schedule, int t) {
  if (schedule.gamma0 <= 0.0)
    throw std::invalid_argument("step_size: gamma0 must be positive");
  if (schedule.t_max < 1)
    throw std::invalid_argument("step_size: t_max must be >= 1");
  if (t < 0 || t > schedule.t_max)
    throw std::out_of_range("step_size: iteration outside [0, t_max]");
  if (schedule.mode == StepSchedule::Mode::fixed) return schedule.gamma0;
  const double phase =
      M_PI * static_cast<double>(t) / static_cast<double>(schedule.t_max);
  return 0.5 * schedule.gamma0 * (1.0 + std::cos(phase));
}

namespace {

double l2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

FixedPointResult fixed_point(
    const std::function<std::vector<double>(const std::vector<double>&)>& op,
    std::vector<double> x0, const AndersonConfig& config, FixedPointMode mode) {
  if (config.memory < 1)
    throw std::invalid_argument("fixed_point: memory must be >= 1");
  if (config.tolerance <= 0.0)
    throw std::invalid_argument("fixed_point: tolerance must be positive");

  FixedPointResult result;
  std::vector<double> x = std::move(x0);
  const std::size_t dim = x.size();

  std::vector<std::vector<double>> hist_x, hist_f;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    std::vector<double> fx = op(x);
    if (fx.size() != dim)
      throw std::invalid_argument("fixed_point: operator changed the shape");
    ++result.iterations;
    if (!all_finite(fx)) {
      result.diverged = true;
      break;
    }
    std::vector<double> f(dim);
    for (std::size_t i = 0; i < dim; ++i) f[i] = fx[i] - x[i];
    const double residual = l2(f) / std::max(l2(x), 1.0);
    result.residual_history.push_back(residual);
    if (residual < config.tolerance) {
      x = std::move(fx);
      result.converged = true;
      break;
    }

    if (mode == FixedPointMode::plain) {
      x = std::move(fx);
      continue;
    }

    hist_x.push_back(x);
    hist_f.push_back(std::move(f));
    if (static_cast<int>(hist_x.size()) > config.memory) {
      hist_x.erase(hist_x.begin());
      hist_f.erase(hist_f.begin());
    }

    const std::size_t h = hist_x.size();
    std::vector<double> gram(h * h, 0.0);
    double max_diag = 0.0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = i; j < h; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += hist_f[i][k] * hist_f[j][k];
        gram[i * h + j] = dot;
        gram[j * h + i] = dot;
        if (i == j) max_diag = std::max(max_diag, dot);
      }
    const double ridge = config.regularization * std::max(max_diag, 1e-30);
    for (std::size_t i = 0; i < h; ++i) gram[i * h + i] += ridge;

    std::vector<double> ones(h, 1.0), alpha(h, 0.0);
    bool usable = cholesky_solve(gram, ones, alpha);
    double alpha_sum = 0.0;
    for (double a : alpha) alpha_sum += a;
    usable = usable && std::abs(alpha_sum) > 1e-12;

    if (!usable) {
      x = std::move(fx);
      continue;
    }
    for (double& a : alpha) a /= alpha_sum;

    std::vector<double> next(dim, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      const double a = alpha[j];
      const auto& xj = hist_x[j];
      const auto& fj = hist_f[j];
      for (std::size_t k = 0; k < dim; ++k)
        next[k] += a * (xj[k] + config.beta * fj[k]);
    }
    if (!all_finite(next)) {
      x = std::move(fx);
      continue;
    }
    x = std::move(next);
  }

  result.state = std::move(x);
  return result;
}

void write_residual_csv(const std::filesystem::path& path,
                        const std::vector<double>& residuals,
                        const std::vector<double>& objectives) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "iteration,residual,objective\n";
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    out << i << ',' << residuals[i] << ',';
    if (i < objectives.size()) out << objectives[i];
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path.string());
}

void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, double learning_rate,
               const AdamConfig& config) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (!all_finite(grads)) throw divergence_error("adam_step: non-finite gradient");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state size mismatch");

  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, state.step);
  const double correction2 = 1.0 - std::pow(b2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

}  // namespace pirate
