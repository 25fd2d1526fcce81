#include "pirate/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "pirate/metrics.hpp"
#include "pirate/warp.hpp"

namespace pirate {

using nlohmann::json;

namespace {

int min_extent(const std::vector<int>& dims) {
  int m = dims[0];
  for (int d : dims) m = std::min(m, d);
  return m;
}

// Smooth scalar field in [-1, 1] used for shading and shape perturbation.
std::vector<double> smooth_noise(const std::vector<int>& dims, std::uint64_t seed,
                                 double scale) {
  Rng rng(seed);
  std::vector<double> noise(element_count(dims));
  for (double& v : noise) v = rng.gaussian();
  std::vector<double> blurred = gaussian_blur(noise, dims, scale);
  double peak = 0.0;
  for (double v : blurred) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : blurred) v /= peak;
  return blurred;
}

struct Blob {
  double center[3];
  double radius[3];
  float intensity;
};

}  // namespace

Phantom make_phantom(const std::vector<int>& dims, std::uint64_t seed,
                     int complexity) {
  for (int d : dims)
    if (d < 16) throw std::invalid_argument("make_phantom: extents must be >= 16");
  if (complexity < 0) throw std::invalid_argument("make_phantom: bad complexity");

  const int rank = static_cast<int>(dims.size());
  const int blob_count = 2 + complexity;
  const double shape_scale = min_extent(dims) / 8.0;

  for (int attempt = 0; attempt < 20; ++attempt) {
    const std::uint64_t base = mix_seed(seed, 0xFA57 + 101u * attempt);
    Rng rng(base);

    std::vector<Blob> blobs(blob_count);
    for (Blob& b : blobs) {
      for (int a = 0; a < rank; ++a) {
        b.center[a] = rng.uniform(-0.40, 0.40);
        b.radius[a] = rng.uniform(0.12, 0.30);
      }
      b.intensity = static_cast<float>(rng.uniform(0.35, 0.95));
    }

    // Smooth coordinate perturbation makes the nested ellipsoids organic.
    std::vector<std::vector<double>> wobble(rank);
    for (int a = 0; a < rank; ++a)
      wobble[a] = smooth_noise(dims, mix_seed(base, 11 + a), shape_scale);
    std::vector<double> shading =
        smooth_noise(dims, mix_seed(base, 99), min_extent(dims) / 6.0);

    Volume volume = Volume::zeros(dims);
    LabelMask labels = LabelMask::zeros(dims);
    std::vector<int> coord(dims.size());
    const double wobble_amp = 0.06;
    for (std::size_t v = 0; v < volume.size(); ++v) {
      unravel_index(v, dims, coord.data());
      double y[3] = {0.0, 0.0, 0.0};
      for (int a = 0; a < rank; ++a) {
        y[a] = 2.0 * coord[a] / (dims[a] - 1.0) - 1.0 + wobble_amp * wobble[a][v];
      }

      double outer = 0.0, inner = 0.0;
      for (int a = 0; a < rank; ++a) {
        outer += (y[a] / 0.90) * (y[a] / 0.90);
        inner += (y[a] / 0.68) * (y[a] / 0.68);
      }

      float base_intensity = 0.0f;
      std::uint16_t label = 0;
      if (outer <= 1.0) {
        base_intensity = 0.22f;
        label = 1;
      }
      if (inner <= 1.0) {
        base_intensity = 0.50f;
        label = 2;
      }
      if (label == 2) {
        for (int k = 0; k < blob_count; ++k) {
          double q = 0.0;
          for (int a = 0; a < rank; ++a) {
            const double d = (y[a] - blobs[k].center[a]) / blobs[k].radius[a];
            q += d * d;
          }
          if (q <= 1.0) {
            base_intensity = blobs[k].intensity;
            label = static_cast<std::uint16_t>(3 + k);
          }
        }
      }

      const double shaded = base_intensity * (1.0 + 0.18 * shading[v]);
      volume.data[v] = static_cast<float>(std::clamp(shaded, 0.0, 1.0));
      labels.labels[v] = label;
    }

    // Every advertised label must be present.
    std::vector<std::size_t> counts(static_cast<std::size_t>(3 + blob_count), 0);
    for (std::uint16_t l : labels.labels) ++counts[l];
    bool complete = true;
    for (std::size_t l = 1; l < counts.size(); ++l)
      if (counts[l] == 0) complete = false;
    if (!complete) continue;
    return Phantom{std::move(volume), std::move(labels)};
  }
  throw std::runtime_error("make_phantom: could not place all labels");
}

RegistrationField make_smooth_field(const std::vector<int>& dims,
                                    std::uint64_t seed, double magnitude,
                                    double smoothness_scale,
                                    bool require_fold_free) {
  if (magnitude < 0.0)
    throw std::invalid_argument("make_smooth_field: magnitude must be >= 0");
  if (smoothness_scale <= 0.0)
    throw std::invalid_argument("make_smooth_field: smoothness scale must be > 0");

  RegistrationField field = RegistrationField::zeros(dims);
  if (magnitude == 0.0) return field;

  const int rank = field.rank();
  const std::size_t n = field.voxels();
  std::vector<std::vector<double>> channels(rank);
  double peak = 0.0;
  for (int c = 0; c < rank; ++c) {
    Rng rng(mix_seed(seed, 31 + static_cast<std::uint64_t>(c)));
    std::vector<double> noise(n);
    for (double& v : noise) v = rng.gaussian();
    channels[c] = gaussian_blur(noise, dims, smoothness_scale);
    for (double v : channels[c]) peak = std::max(peak, std::abs(v));
  }
  if (peak == 0.0) return field;
  const double scale = magnitude / peak;
  for (int c = 0; c < rank; ++c)
    for (std::size_t v = 0; v < n; ++v)
      field.value(v, c) = static_cast<float>(scale * channels[c][v]);

  if (require_fold_free &&
      negative_jd_ratio(jacobian_map(field)) > 0.0)
    throw std::invalid_argument(
        "make_smooth_field: parameters produce folds; lower magnitude or "
        "raise smoothness_scale");
  return field;
}

RegistrationPair make_pair(const Phantom& phantom,
                           const RegistrationField& gt_field) {
  if (phantom.volume.dims != gt_field.dims)
    throw std::invalid_argument("make_pair: shape mismatch");
  RegistrationPair pair;
  pair.fixed = phantom.volume;
  pair.fixed_mask = phantom.labels;
  pair.moving = warp(phantom.volume, gt_field);
  pair.moving_mask = warp_mask(phantom.labels, gt_field);
  pair.ground_truth = gt_field;
  return pair;
}

std::vector<RegistrationPair> generate_pairs(const DatasetParams& params) {
  if (params.pairs < 1)
    throw std::invalid_argument("generate_pairs: need at least one pair");
  std::vector<RegistrationPair> pairs;
  pairs.reserve(static_cast<std::size_t>(params.pairs));
  for (int i = 0; i < params.pairs; ++i) {
    const Phantom phantom =
        make_phantom(params.dims, mix_seed(params.seed, 500 + i), params.complexity);
    const RegistrationField gt =
        make_smooth_field(params.dims, mix_seed(params.seed, 9000 + i),
                          params.magnitude, params.smoothness_scale);
    pairs.push_back(make_pair(phantom, gt));
  }
  return pairs;
}

void write_dataset(const std::filesystem::path& dir, const DatasetParams& params,
                   const std::vector<RegistrationPair>& pairs) {
  std::filesystem::create_directories(dir / "pairs");
  json manifest = {{"dims", params.dims},
                   {"pairs", params.pairs},
                   {"seed", params.seed},
                   {"magnitude", params.magnitude},
                   {"smoothness_scale", params.smoothness_scale},
                   {"complexity", params.complexity},
                   {"pair_dirs", json::array()}};
  char name[32];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(name, sizeof(name), "pair_%03zu", i);
    const std::filesystem::path pair_dir = dir / "pairs" / name;
    std::filesystem::create_directories(pair_dir);
    write_volume(pairs[i].fixed, pair_dir / "fixed.vol.json");
    write_mask(pairs[i].fixed_mask, pair_dir / "fixed.mask.json");
    write_volume(pairs[i].moving, pair_dir / "moving.vol.json");
    write_mask(pairs[i].moving_mask, pair_dir / "moving.mask.json");
    write_field(pairs[i].ground_truth, pair_dir / "gt.field.json");
    manifest["pair_dirs"].push_back(std::string("pairs/") + name);
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw io_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw io_error("no manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw io_error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  LoadedDataset ds;
  ds.params.dims = manifest.at("dims").get<std::vector<int>>();
  ds.params.pairs = manifest.at("pairs").get<int>();
  ds.params.seed = manifest.at("seed").get<std::uint64_t>();
  ds.params.magnitude = manifest.at("magnitude").get<double>();
  ds.params.smoothness_scale = manifest.at("smoothness_scale").get<double>();
  ds.params.complexity = manifest.at("complexity").get<int>();
  for (const json& rel : manifest.at("pair_dirs")) {
    const std::filesystem::path pair_dir = dir / rel.get<std::string>();
    RegistrationPair pair;
    pair.fixed = read_volume(pair_dir / "fixed.vol.json");
    pair.fixed_mask = read_mask(pair_dir / "fixed.mask.json");
    pair.moving = read_volume(pair_dir / "moving.vol.json");
    pair.moving_mask = read_mask(pair_dir / "moving.mask.json");
    pair.ground_truth = read_field(pair_dir / "gt.field.json");
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

std::vector<RegistrationField> synthetic_clean_fields(
    const std::vector<int>& full_dims, int count, std::uint64_t seed,
    double magnitude, double smoothness_scale) {
  if (count < 1)
    throw std::invalid_argument("synthetic_clean_fields: count must be >= 1");
  const std::vector<int> dims = half_dims(full_dims);
  std::vector<RegistrationField> fields;
  fields.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    fields.push_back(make_smooth_field(dims, mix_seed(seed, 4000 + i),
                                       magnitude / 2.0, smoothness_scale / 2.0));
  return fields;
}

std::vector<NoisyFieldSample> make_denoiser_dataset(
    const std::vector<RegistrationField>& clean_fields, double sigma,
    std::uint64_t seed) {
  if (clean_fields.empty())
    throw std::invalid_argument("make_denoiser_dataset: no clean fields");
  if (sigma <= 0.0)
    throw std::invalid_argument("make_denoiser_dataset: sigma must be > 0");
  std::vector<NoisyFieldSample> samples;
  samples.reserve(clean_fields.size());
  for (std::size_t i = 0; i < clean_fields.size(); ++i) {
    NoisyFieldSample s;
    s.clean = clean_fields[i];
    s.noisy = s.clean;
    s.sigma = sigma;
    Rng rng(mix_seed(seed, 7000 + i));
    for (auto& v : s.noisy.data)
      v = static_cast<float>(static_cast<double>(v) + sigma * rng.gaussian());
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pirate
