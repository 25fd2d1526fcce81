#include "pirate/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace pirate {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Parameter bookkeeping

std::size_t DenoiserParameters::layer_weight_count(std::size_t layer) const {
  const ConvLayerShape& s = layers[layer];
  std::size_t taps = 1;
  for (int k : s.kernel) taps *= static_cast<std::size_t>(k);
  return taps * static_cast<std::size_t>(s.in_channels) *
         static_cast<std::size_t>(s.out_channels);
}

std::size_t DenoiserParameters::layer_offset(std::size_t layer) const {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layer; ++l)
    offset += layer_weight_count(l) + static_cast<std::size_t>(layers[l].out_channels);
  return offset;
}

std::size_t DenoiserParameters::bias_offset(std::size_t layer) const {
  return layer_offset(layer) + layer_weight_count(layer);
}

std::size_t DenoiserParameters::total_values() const {
  return layers.empty() ? 0 : layer_offset(layers.size());
}

void DenoiserParameters::validate() const {
  if (spatial_rank < 2 || spatial_rank > 3)
    throw std::invalid_argument("denoiser: spatial rank must be 2 or 3");
  if (layers.empty()) throw std::invalid_argument("denoiser: no layers");
  if (layers.front().in_channels != spatial_rank ||
      layers.back().out_channels != spatial_rank)
    throw std::invalid_argument("denoiser: outer channel counts must equal rank");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const ConvLayerShape& s = layers[l];
    if (s.in_channels <= 0 || s.out_channels <= 0)
      throw std::invalid_argument("denoiser: channel counts must be positive");
    if (static_cast<int>(s.kernel.size()) != spatial_rank)
      throw std::invalid_argument("denoiser: kernel rank mismatch");
    for (int k : s.kernel)
      if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("denoiser: kernel extents must be odd");
    if (l + 1 < layers.size() && s.out_channels != layers[l + 1].in_channels)
      throw std::invalid_argument("denoiser: layer channel chain broken");
  }
  if (values.size() != total_values())
    throw std::invalid_argument("denoiser: value count does not match shapes");
  if (!all_finite(values))
    throw std::invalid_argument("denoiser: non-finite parameter");
}

DenoiserParameters DenoiserParameters::create(int spatial_rank,
                                              const std::vector<int>& hidden_channels,
                                              int kernel_extent,
                                              std::uint64_t seed) {
  DenoiserParameters p;
  p.spatial_rank = spatial_rank;
  std::vector<int> widths;
  widths.push_back(spatial_rank);
  for (int h : hidden_channels) widths.push_back(h);
  widths.push_back(spatial_rank);
  const std::vector<int> kernel(static_cast<std::size_t>(spatial_rank), kernel_extent);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    p.layers.push_back({widths[l], widths[l + 1], kernel});

  p.values.assign(p.total_values(), 0.0);
  Rng rng(mix_seed(seed, 0xC0DE));
  for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
    std::size_t taps = 1;
    for (int k : p.layers[l].kernel) taps *= static_cast<std::size_t>(k);
    const double fan_in =
        static_cast<double>(taps) * static_cast<double>(p.layers[l].in_channels);
    const double scale = std::sqrt(2.0 / fan_in);
    const std::size_t begin = p.layer_offset(l);
    const std::size_t count = p.layer_weight_count(l);
    for (std::size_t i = 0; i < count; ++i)
      p.values[begin + i] = scale * rng.gaussian();
  }
  // Final layer stays zero: the fresh network is the identity denoiser.
  p.validate();
  return p;
}

DenoiserParameters DenoiserParameters::desk_default(int spatial_rank,
                                                    std::uint64_t seed) {
  return create(spatial_rank, {16, 16, 16}, 3, seed);
}

// ---------------------------------------------------------------------------
// Convolution geometry shared by forward and backward passes

namespace {

struct ConvGeometry {
  std::vector<int> dims;
  std::vector<std::size_t> strides;
  std::vector<std::array<int, 3>> tap_coords;  // offsets per axis
  int rank = 0;

  ConvGeometry(const std::vector<int>& image_dims, const std::vector<int>& kernel) {
    dims = image_dims;
    strides = row_major_strides(dims);
    rank = static_cast<int>(dims.size());
    std::array<int, 3> offset{0, 0, 0};
    std::array<int, 3> radius{0, 0, 0};
    for (int a = 0; a < rank; ++a) radius[a] = kernel[a] / 2;
    for (int a = 0; a < rank; ++a) offset[a] = -radius[a];
    while (true) {
      tap_coords.push_back(offset);
      int a = rank - 1;
      while (a >= 0) {
        if (++offset[a] <= radius[a]) break;
        offset[a] = -radius[a];
        --a;
      }
      if (a < 0) break;
    }
  }

  // Flat neighbor index of voxel v (with coords) shifted by tap t, or -1.
  std::ptrdiff_t neighbor(std::size_t v, const int* coord, std::size_t t) const {
    std::ptrdiff_t flat = static_cast<std::ptrdiff_t>(v);
    for (int a = 0; a < rank; ++a) {
      const int idx = coord[a] + tap_coords[t][a];
      if (idx < 0 || idx >= dims[a]) return -1;
      flat += static_cast<std::ptrdiff_t>(tap_coords[t][a]) *
              static_cast<std::ptrdiff_t>(strides[a]);
    }
    return flat;
  }
};

// One zero-padded convolution layer on interleaved data.
void conv_layer(const ConvGeometry& geo, const std::vector<double>& input,
                int in_ch, int out_ch, const double* weights, const double* bias,
                std::vector<double>& output) {
  const std::size_t n = input.size() / static_cast<std::size_t>(in_ch);
  output.assign(n * static_cast<std::size_t>(out_ch), 0.0);
  const std::size_t taps = geo.tap_coords.size();
  std::vector<int> coord(geo.dims.size());
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, geo.dims, coord.data());
    double* out = output.data() + v * static_cast<std::size_t>(out_ch);
    for (int o = 0; o < out_ch; ++o) out[o] = bias[o];
    for (std::size_t t = 0; t < taps; ++t) {
      const std::ptrdiff_t nb = geo.neighbor(v, coord.data(), t);
      if (nb < 0) continue;
      const double* in =
          input.data() + static_cast<std::size_t>(nb) * static_cast<std::size_t>(in_ch);
      const double* w =
          weights + t * static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(out_ch);
      for (int i = 0; i < in_ch; ++i) {
        const double x = in[i];
        const double* wi = w + static_cast<std::size_t>(i) * out_ch;
        for (int o = 0; o < out_ch; ++o) out[o] += wi[o] * x;
      }
    }
  }
}

// Backward pass of one layer: accumulates weight/bias gradients and the
// gradient with respect to the layer input.
void conv_layer_backward(const ConvGeometry& geo, const std::vector<double>& input,
                         int in_ch, int out_ch, const double* weights,
                         const std::vector<double>& out_grad, double* weight_grad,
                         double* bias_grad, std::vector<double>* input_grad) {
  const std::size_t n = input.size() / static_cast<std::size_t>(in_ch);
  const std::size_t taps = geo.tap_coords.size();
  if (input_grad) input_grad->assign(input.size(), 0.0);
  std::vector<int> coord(geo.dims.size());
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, geo.dims, coord.data());
    const double* g = out_grad.data() + v * static_cast<std::size_t>(out_ch);
    for (int o = 0; o < out_ch; ++o) bias_grad[o] += g[o];
    for (std::size_t t = 0; t < taps; ++t) {
      const std::ptrdiff_t nb = geo.neighbor(v, coord.data(), t);
      if (nb < 0) continue;
      const double* in =
          input.data() + static_cast<std::size_t>(nb) * static_cast<std::size_t>(in_ch);
      double* wg =
          weight_grad + t * static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(out_ch);
      const double* w =
          weights + t * static_cast<std::size_t>(in_ch) * static_cast<std::size_t>(out_ch);
      for (int i = 0; i < in_ch; ++i) {
        const double x = in[i];
        double acc = 0.0;
        const double* wi = w + static_cast<std::size_t>(i) * out_ch;
        double* wgi = wg + static_cast<std::size_t>(i) * out_ch;
        for (int o = 0; o < out_ch; ++o) {
          wgi[o] += x * g[o];
          acc += wi[o] * g[o];
        }
        if (input_grad)
          (*input_grad)[static_cast<std::size_t>(nb) * in_ch + i] += acc;
      }
    }
  }
}

std::vector<double> to_double(const RegistrationField& f) {
  return std::vector<double>(f.data.begin(), f.data.end());
}

void check_convnet_input(const DenoiserParameters& params,
                         const RegistrationField& z) {
  params.validate();
  if (z.rank() != params.spatial_rank || z.channels != params.spatial_rank)
    throw std::invalid_argument("convnet: field rank does not match the network");
  if (!all_finite(z.data))
    throw std::invalid_argument("convnet: non-finite input field");
}

// Runs the residual net forward, filling per-layer inputs and pre-activations.
void run_forward(const DenoiserParameters& params, const RegistrationField& z,
                 ConvNetTrace& trace) {
  const std::size_t n_layers = params.layers.size();
  trace.inputs.resize(n_layers);
  trace.pre_activations.resize(n_layers);
  ConvGeometry geo(z.dims, params.layers.front().kernel);
  std::vector<double> current = to_double(z);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const ConvLayerShape& shape = params.layers[l];
    trace.inputs[l] = current;
    std::vector<double> out;
    conv_layer(geo, current, shape.in_channels, shape.out_channels,
               params.values.data() + params.layer_offset(l),
               params.values.data() + params.bias_offset(l), out);
    trace.pre_activations[l] = out;
    if (l + 1 < n_layers)
      for (double& x : out) x = std::max(0.0, x);
    current = std::move(out);
  }
}

}  // namespace

RegistrationField convnet_forward(const DenoiserParameters& params,
                                  const RegistrationField& z, ConvNetTrace* trace) {
  check_convnet_input(params, z);
  ConvNetTrace local;
  ConvNetTrace& t = trace ? *trace : local;
  run_forward(params, z, t);
  const std::vector<double>& residual = t.pre_activations.back();
  if (!all_finite(residual))
    throw divergence_error("convnet: non-finite activation");
  RegistrationField out = RegistrationField::zeros(z.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(static_cast<double>(z.data[i]) - residual[i]);
  return out;
}

namespace {

// Shared backward driver; returns the parameter gradient and optionally the
// input gradient of <upstream, z - residual(z)>.
std::vector<double> run_backward(const DenoiserParameters& params,
                                 const RegistrationField& z,
                                 const RegistrationField& upstream,
                                 std::vector<double>* input_grad_out) {
  check_convnet_input(params, z);
  if (upstream.dims != z.dims || upstream.channels != z.channels)
    throw std::invalid_argument("convnet: upstream shape mismatch");

  ConvNetTrace trace;
  run_forward(params, z, trace);

  ConvGeometry geo(z.dims, params.layers.front().kernel);
  std::vector<double> param_grad(params.total_values(), 0.0);

  // d<upstream, z - residual>/d(residual) = -upstream.
  std::vector<double> g(upstream.data.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = -static_cast<double>(upstream.data[i]);

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const ConvLayerShape& shape = params.layers[l];
    std::vector<double> input_grad;
    const bool need_input = l > 0 || input_grad_out != nullptr;
    conv_layer_backward(geo, trace.inputs[l], shape.in_channels,
                        shape.out_channels,
                        params.values.data() + params.layer_offset(l), g,
                        param_grad.data() + params.layer_offset(l),
                        param_grad.data() + params.bias_offset(l),
                        need_input ? &input_grad : nullptr);
    if (l > 0) {
      const std::vector<double>& pre = trace.pre_activations[l - 1];
      g.assign(input_grad.size(), 0.0);
      for (std::size_t i = 0; i < input_grad.size(); ++i)
        g[i] = pre[i] > 0.0 ? input_grad[i] : 0.0;
    } else if (input_grad_out) {
      *input_grad_out = std::move(input_grad);
    }
  }
  return param_grad;
}

}  // namespace

std::vector<double> convnet_param_gradient(const DenoiserParameters& params,
                                           const RegistrationField& z,
                                           const RegistrationField& upstream,
                                           const std::vector<bool>* frozen_layers) {
  std::vector<double> grad = run_backward(params, z, upstream, nullptr);
  if (frozen_layers) {
    if (frozen_layers->size() != params.layers.size())
      throw std::invalid_argument("convnet: frozen mask size mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      if (!(*frozen_layers)[l]) continue;
      const std::size_t begin = params.layer_offset(l);
      const std::size_t end = params.bias_offset(l) +
                              static_cast<std::size_t>(params.layers[l].out_channels);
      std::fill(grad.begin() + static_cast<std::ptrdiff_t>(begin),
                grad.begin() + static_cast<std::ptrdiff_t>(end), 0.0);
    }
  }
  return grad;
}

RegistrationField convnet_input_gradient(const DenoiserParameters& params,
                                         const RegistrationField& z,
                                         const RegistrationField& upstream) {
  std::vector<double> input_grad;
  run_backward(params, z, upstream, &input_grad);
  // Direct path of z in (z - residual) contributes upstream itself.
  RegistrationField out = RegistrationField::zeros(z.dims);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] =
        static_cast<float>(static_cast<double>(upstream.data[i]) + input_grad[i]);
  return out;
}

// ---------------------------------------------------------------------------
// TV and Gaussian denoisers

namespace {

RegistrationField tv_denoise(const TvDenoiser& cfg, const RegistrationField& z) {
  if (cfg.lambda <= 0.0) throw std::invalid_argument("tv: lambda must be > 0");
  if (cfg.iterations < 1) throw std::invalid_argument("tv: iterations must be >= 1");
  const int rank = z.rank();
  const auto strides = row_major_strides(z.dims);
  const std::size_t n = z.voxels();
  const double tau = 1.0 / (4.0 * rank);

  RegistrationField out = RegistrationField::zeros(z.dims);
  std::vector<int> coord(z.dims.size());
  std::vector<double> u(n), div(n);
  std::vector<std::vector<double>> p(static_cast<std::size_t>(rank));

  for (int ch = 0; ch < rank; ++ch) {
    for (auto& axis : p) axis.assign(n, 0.0);

    // Transpose of the forward-difference gradient: u = z - lambda * grad^T p
    // is the primal point for dual variable p.
    auto apply_grad_transpose = [&](std::vector<double>& target) {
      for (std::size_t v = 0; v < n; ++v) {
        unravel_index(v, z.dims, coord.data());
        double acc = 0.0;
        for (int a = 0; a < rank; ++a) {
          if (coord[a] > 0) acc += p[a][v - strides[a]];
          if (coord[a] + 1 < z.dims[a]) acc -= p[a][v];
        }
        target[v] = acc;
      }
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
      apply_grad_transpose(div);
      for (std::size_t v = 0; v < n; ++v)
        u[v] = static_cast<double>(z.value(v, ch)) - cfg.lambda * div[v];
      // Dual ascent with reprojection onto |p| <= 1 pointwise.
      for (std::size_t v = 0; v < n; ++v) {
        unravel_index(v, z.dims, coord.data());
        double grad[3] = {0.0, 0.0, 0.0};
        double norm2 = 0.0;
        for (int a = 0; a < rank; ++a) {
          if (coord[a] + 1 < z.dims[a]) grad[a] = u[v + strides[a]] - u[v];
          norm2 += grad[a] * grad[a];
        }
        const double denom = 1.0 + tau * std::sqrt(norm2);
        for (int a = 0; a < rank; ++a)
          p[a][v] = (p[a][v] + tau * grad[a]) / denom;
      }
    }
    apply_grad_transpose(div);
    for (std::size_t v = 0; v < n; ++v)
      out.value(v, ch) = static_cast<float>(static_cast<double>(z.value(v, ch)) -
                                            cfg.lambda * div[v]);
  }
  return out;
}

RegistrationField gaussian_denoise(const GaussianDenoiser& cfg,
                                   const RegistrationField& z) {
  if (cfg.sigma_blur <= 0.0)
    throw std::invalid_argument("gaussian denoiser: sigma_blur must be > 0");
  const int rank = z.rank();
  const std::size_t n = z.voxels();
  RegistrationField out = RegistrationField::zeros(z.dims);
  std::vector<double> channel(n);
  for (int ch = 0; ch < rank; ++ch) {
    for (std::size_t v = 0; v < n; ++v)
      channel[v] = static_cast<double>(z.value(v, ch));
    const std::vector<double> blurred = gaussian_blur(channel, z.dims, cfg.sigma_blur);
    for (std::size_t v = 0; v < n; ++v)
      out.value(v, ch) = static_cast<float>(blurred[v]);
  }
  return out;
}

}  // namespace

RegistrationField denoise(const DenoiserKind& denoiser, const RegistrationField& z) {
  if (!all_finite(z.data))
    throw std::invalid_argument("denoise: non-finite input field");
  return std::visit(
      [&](const auto& d) -> RegistrationField {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, TvDenoiser>) {
          return tv_denoise(d, z);
        } else if constexpr (std::is_same_v<T, GaussianDenoiser>) {
          return gaussian_denoise(d, z);
        } else {
          return convnet_forward(d.params, z);
        }
      },
      denoiser);
}

// ---------------------------------------------------------------------------
// Training

double field_mse(const RegistrationField& a, const RegistrationField& b) {
  if (a.dims != b.dims || a.channels != b.channels)
    throw std::invalid_argument("field_mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

TrainedDenoiser train_denoiser(const std::vector<NoisyFieldSample>& dataset,
                               const DenoiserTrainingConfig& config,
                               const TrainedDenoiser* resume_from) {
  if (dataset.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
  if (config.sigma <= 0.0 || config.sigma > 10.0)
    throw std::invalid_argument("train_denoiser: sigma must be in (0, 10]");
  if (config.epochs < 0)
    throw std::invalid_argument("train_denoiser: epochs must be >= 0");
  if (config.batch_size < 1)
    throw std::invalid_argument("train_denoiser: batch size must be >= 1");
  const std::vector<int>& dims = dataset.front().clean.dims;
  for (const NoisyFieldSample& s : dataset) {
    if (s.clean.dims != dims || s.noisy.dims != dims)
      throw std::invalid_argument("train_denoiser: inconsistent sample shapes");
    if (s.sigma <= 0.0)
      throw std::invalid_argument("train_denoiser: sample sigma must be > 0");
  }

  TrainedDenoiser result;
  if (resume_from) {
    result = *resume_from;
    result.params.validate();
  } else {
    result.params = DenoiserParameters::desk_default(
        static_cast<int>(dims.size()), mix_seed(config.seed, 0x1217));
    result.sigma = config.sigma;
    result.seed = config.seed;
    result.epoch = 0;
  }

  const std::size_t n_values = result.params.total_values();
  const std::size_t numel = dataset.front().clean.data.size();
  std::vector<std::size_t> order(dataset.size());

  for (int epoch = result.epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i-- > 1;) {
      const auto j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<int>(i)));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end =
          std::min(cursor + static_cast<std::size_t>(config.batch_size), order.size());
      const double batch_n = static_cast<double>(batch_end - cursor);
      std::vector<double> grad(n_values, 0.0);
      for (std::size_t b = cursor; b < batch_end; ++b) {
        const NoisyFieldSample& sample = dataset[order[b]];
        RegistrationField out = convnet_forward(result.params, sample.noisy);
        RegistrationField upstream = RegistrationField::zeros(dims);
        double loss = 0.0;
        for (std::size_t i = 0; i < numel; ++i) {
          const double diff = static_cast<double>(out.data[i]) -
                              static_cast<double>(sample.clean.data[i]);
          loss += diff * diff;
          upstream.data[i] =
              static_cast<float>(2.0 * diff / static_cast<double>(numel));
        }
        loss /= static_cast<double>(numel);
        if (!std::isfinite(loss))
          throw divergence_error("train_denoiser: non-finite loss at epoch " +
                                 std::to_string(epoch));
        epoch_loss += loss;
        const std::vector<double> sample_grad =
            convnet_param_gradient(result.params, sample.noisy, upstream);
        for (std::size_t i = 0; i < n_values; ++i)
          grad[i] += sample_grad[i] / batch_n;
      }
      adam_step(result.adam, result.params.values, grad, config.learning_rate);
      cursor = batch_end;
    }
    result.log.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    result.epoch = epoch + 1;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(const TrainedDenoiser& denoiser,
                      const std::filesystem::path& header_path) {
  denoiser.params.validate();
  if (header_path.extension() != ".json")
    throw std::invalid_argument("checkpoint path must end in .json");

  json layers = json::array();
  for (const ConvLayerShape& s : denoiser.params.layers)
    layers.push_back({{"in", s.in_channels},
                      {"out", s.out_channels},
                      {"kernel", s.kernel}});
  const std::size_t n = denoiser.params.total_values();
  json header = {{"kind", "convnet-denoiser"},
                 {"spatial_rank", denoiser.params.spatial_rank},
                 {"layers", layers},
                 {"dtype", "f64"},
                 {"sigma", denoiser.sigma},
                 {"seed", denoiser.seed},
                 {"epoch", denoiser.epoch},
                 {"adam_step", denoiser.adam.step},
                 {"epoch_loss", denoiser.log.epoch_loss},
                 {"sections", {"params", "adam_m", "adam_v"}}};

  std::filesystem::path raw = header_path;
  raw.replace_extension(".raw");
  std::ofstream head(header_path, std::ios::trunc);
  if (!head) throw io_error("cannot open for writing: " + header_path.string());
  head << header.dump(2) << '\n';

  std::vector<double> payload;
  payload.reserve(3 * n);
  payload.insert(payload.end(), denoiser.params.values.begin(),
                 denoiser.params.values.end());
  auto append_or_zero = [&](const std::vector<double>& v) {
    if (v.empty())
      payload.insert(payload.end(), n, 0.0);
    else
      payload.insert(payload.end(), v.begin(), v.end());
  };
  append_or_zero(denoiser.adam.m);
  append_or_zero(denoiser.adam.v);

  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + raw.string());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
  if (!out) throw io_error("write failed: " + raw.string());
}

TrainedDenoiser read_checkpoint(const std::filesystem::path& header_path) {
  std::ifstream head(header_path);
  if (!head) throw io_error("cannot open: " + header_path.string());
  json header;
  try {
    head >> header;
  } catch (const json::exception& e) {
    throw io_error("malformed checkpoint " + header_path.string() + ": " + e.what());
  }
  if (!header.contains("kind") || header["kind"] != "convnet-denoiser")
    throw io_error("not a denoiser checkpoint: " + header_path.string());

  TrainedDenoiser d;
  d.params.spatial_rank = header.at("spatial_rank").get<int>();
  for (const json& l : header.at("layers"))
    d.params.layers.push_back({l.at("in").get<int>(), l.at("out").get<int>(),
                               l.at("kernel").get<std::vector<int>>()});
  d.sigma = header.at("sigma").get<double>();
  d.seed = header.at("seed").get<std::uint64_t>();
  d.epoch = header.at("epoch").get<int>();
  d.adam.step = header.at("adam_step").get<int>();
  if (header.contains("epoch_loss"))
    d.log.epoch_loss = header["epoch_loss"].get<std::vector<double>>();

  const std::size_t n = d.params.total_values();
  std::filesystem::path raw = header_path;
  raw.replace_extension(".raw");
  std::ifstream in(raw, std::ios::binary | std::ios::ate);
  if (!in) throw io_error("cannot open: " + raw.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != 3 * n * sizeof(double))
    throw io_error("checkpoint payload size mismatch: " + raw.string());
  in.seekg(0);
  std::vector<double> payload(3 * n);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw io_error("read failed: " + raw.string());

  d.params.values.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(n));
  d.adam.m.assign(payload.begin() + static_cast<std::ptrdiff_t>(n),
                  payload.begin() + static_cast<std::ptrdiff_t>(2 * n));
  d.adam.v.assign(payload.begin() + static_cast<std::ptrdiff_t>(2 * n), payload.end());
  d.params.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Gaussian-prior oracle

MmseResult mmse_gaussian_oracle(const std::vector<double>& mean,
                                const std::vector<double>& covariance,
                                double sigma, const std::vector<double>& z) {
  const std::size_t n = mean.size();
  if (n == 0 || n > 16)
    throw std::invalid_argument("mmse oracle: dimension must be in [1, 16]");
  if (covariance.size() != n * n || z.size() != n)
    throw std::invalid_argument("mmse oracle: shape mismatch");
  if (sigma < 0.0) throw std::invalid_argument("mmse oracle: sigma must be >= 0");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(covariance[i * n + j] - covariance[j * n + i]) > 1e-9)
        throw std::invalid_argument("mmse oracle: covariance not symmetric");

  std::vector<double> marginal = covariance;  // covariance + sigma^2 I
  for (std::size_t i = 0; i < n; ++i) marginal[i * n + i] += sigma * sigma;

  std::vector<double> centered(n), solved(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = z[i] - mean[i];
  if (!cholesky_solve(marginal, centered, solved))
    throw std::invalid_argument("mmse oracle: covariance + sigma^2 I not SPD");

  MmseResult result;
  result.denoised.resize(n);
  result.score.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double prior_pull = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      prior_pull += covariance[i * n + j] * solved[j];
    result.denoised[i] = mean[i] + prior_pull;
    result.score[i] = sigma * sigma * solved[i];
  }
  return result;
}

}  // namespace pirate
