#include <filesystem>
#include <set>

#include "doctest.h"
#include "pirate/data.hpp"
#include "pirate/metrics.hpp"
#include "support.hpp"

using namespace pirate;

TEST_CASE("phantoms are deterministic with at least four non-empty labels") {
  Phantom a = make_phantom({64, 64}, 7);
  Phantom b = make_phantom({64, 64}, 7);
  CHECK(a.volume.data == b.volume.data);
  CHECK(a.labels.labels == b.labels.labels);

  std::set<std::uint16_t> present(a.labels.labels.begin(), a.labels.labels.end());
  present.erase(0);
  CHECK(present.size() >= 4);

  for (float v : a.volume.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  Phantom c = make_phantom({64, 64}, 8);
  CHECK(c.volume.data != a.volume.data);

  CHECK_THROWS_AS(make_phantom({8, 8}, 1), std::invalid_argument);
}

TEST_CASE("3d phantoms also carry their labels") {
  Phantom p = make_phantom({24, 24, 24}, 3, 1);
  std::set<std::uint16_t> present(p.labels.labels.begin(), p.labels.labels.end());
  present.erase(0);
  CHECK(present.size() >= 3);
}

TEST_CASE("smooth fields are seeded, bounded and fold free") {
  RegistrationField zero = make_smooth_field({32, 32}, 1, 0.0, 8.0);
  for (float v : zero.data) CHECK(v == 0.0f);

  RegistrationField f = make_smooth_field({64, 64}, 5, 3.0, 8.0);
  RegistrationField g = make_smooth_field({64, 64}, 5, 3.0, 8.0);
  CHECK(f.data == g.data);

  double peak = 0.0;
  for (float v : f.data) peak = std::max(peak, std::abs(static_cast<double>(v)));
  CHECK(peak == doctest::Approx(3.0).epsilon(1e-5));
  CHECK(negative_jd_ratio(jacobian_map(f)) == 0.0);

  // Violent parameters must be rejected when fold-freedom is requested.
  CHECK_THROWS_AS(make_smooth_field({32, 32}, 2, 20.0, 1.0, true),
                  std::invalid_argument);
}

TEST_CASE("pairs warp the phantom and keep the ground truth") {
  Phantom phantom = make_phantom({64, 64}, 11);
  RegistrationField zero = RegistrationField::zeros({64, 64});
  RegistrationPair still = make_pair(phantom, zero);
  CHECK(still.moving.data == still.fixed.data);
  CHECK(still.moving_mask.labels == still.fixed_mask.labels);

  RegistrationField gt = make_smooth_field({64, 64}, 12, 3.0, 8.0);
  RegistrationPair pair = make_pair(phantom, gt);
  const DiceResult overlap = dsc(pair.fixed_mask, pair.moving_mask);
  CHECK(overlap.mean < 1.0);
  CHECK(overlap.mean > 0.2);
}

TEST_CASE("dataset write and read round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pirate_tests" / "dataset";
  fs::remove_all(dir);

  DatasetParams params;
  params.dims = {32, 32};
  params.pairs = 3;
  params.seed = 21;
  params.magnitude = 1.5;
  params.smoothness_scale = 4.0;
  std::vector<RegistrationPair> pairs = generate_pairs(params);
  REQUIRE(pairs.size() == 3);
  write_dataset(dir, params, pairs);

  LoadedDataset loaded = read_dataset(dir);
  CHECK(loaded.params.pairs == 3);
  CHECK(loaded.params.seed == 21);
  REQUIRE(loaded.pairs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.pairs[i].fixed.data == pairs[i].fixed.data);
    CHECK(loaded.pairs[i].moving.data == pairs[i].moving.data);
    CHECK(loaded.pairs[i].ground_truth.data == pairs[i].ground_truth.data);
    CHECK(loaded.pairs[i].fixed_mask.labels == pairs[i].fixed_mask.labels);
  }
}

TEST_CASE("denoiser dataset noise statistics match the requested sigma") {
  std::vector<RegistrationField> fields =
      synthetic_clean_fields({64, 64}, 20, 31, 3.0, 8.0);
  REQUIRE(fields.size() == 20);
  CHECK(fields[0].dims == std::vector<int>{32, 32});
  for (const auto& f : fields)
    CHECK(negative_jd_ratio(jacobian_map(f)) == 0.0);

  const double sigma = 0.4;
  auto samples = make_denoiser_dataset(fields, sigma, 32);
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (const NoisyFieldSample& s : samples) {
    for (std::size_t i = 0; i < s.clean.data.size(); ++i) {
      const double d = static_cast<double>(s.noisy.data[i]) - s.clean.data[i];
      sum_sq += d * d;
      ++count;
    }
  }
  const double measured = std::sqrt(sum_sq / static_cast<double>(count));
  CHECK(std::abs(measured - sigma) / sigma < 0.05);

  auto again = make_denoiser_dataset(fields, sigma, 32);
  CHECK(again[0].noisy.data == samples[0].noisy.data);
}
