#include "pirate/grid.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace pirate {

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts are unsupported");

using nlohmann::json;

std::size_t element_count(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<std::size_t> row_major_strides(const std::vector<int>& dims) {
  std::vector<std::size_t> strides(dims.size(), 1);
  for (std::size_t a = dims.size(); a-- > 1;)
    strides[a - 1] = strides[a] * static_cast<std::size_t>(dims[a]);
  return strides;
}

void unravel_index(std::size_t flat, const std::vector<int>& dims, int* coords) {
  for (std::size_t a = dims.size(); a-- > 0;) {
    const auto extent = static_cast<std::size_t>(dims[a]);
    coords[a] = static_cast<int>(flat % extent);
    flat /= extent;
  }
}

static void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2 || dims.size() > 3)
    throw std::invalid_argument("grid rank must be 2 or 3");
  for (int d : dims)
    if (d <= 0) throw std::invalid_argument("grid extents must be positive");
}

Volume Volume::zeros(std::vector<int> dims) {
  check_dims(dims);
  Volume v;
  v.data.assign(element_count(dims), 0.0f);
  v.dims = std::move(dims);
  return v;
}

float Volume::at(std::span<const int> idx) const {
  const auto strides = row_major_strides(dims);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dims.size(); ++a)
    flat += static_cast<std::size_t>(idx[a]) * strides[a];
  return data[flat];
}

float& Volume::at(std::span<const int> idx) {
  const auto strides = row_major_strides(dims);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < dims.size(); ++a)
    flat += static_cast<std::size_t>(idx[a]) * strides[a];
  return data[flat];
}

RegistrationField RegistrationField::zeros(std::vector<int> dims) {
  check_dims(dims);
  RegistrationField f;
  f.channels = static_cast<int>(dims.size());
  f.data.assign(element_count(dims) * static_cast<std::size_t>(f.channels), 0.0f);
  f.dims = std::move(dims);
  return f;
}

LabelMask LabelMask::zeros(std::vector<int> dims) {
  check_dims(dims);
  LabelMask m;
  m.labels.assign(element_count(dims), 0);
  m.dims = std::move(dims);
  return m;
}

// ---------------------------------------------------------------------------
// File I/O

static std::filesystem::path raw_path_for(const std::filesystem::path& header) {
  if (header.extension() != ".json")
    throw std::invalid_argument("grid header path must end in .json: " +
                                header.string());
  std::filesystem::path raw = header;
  raw.replace_extension(".raw");
  return raw;
}

static void write_bytes(const std::filesystem::path& path, const void* bytes,
                        std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(count));
  if (!out) throw io_error("write failed: " + path.string());
}

static std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw io_error("cannot open: " + path.string());
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  in.read(bytes.data(), size);
  if (!in) throw io_error("read failed: " + path.string());
  return bytes;
}

static json read_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path.string());
  json header;
  try {
    in >> header;
  } catch (const json::exception& e) {
    throw io_error("malformed header " + path.string() + ": " + e.what());
  }
  return header;
}

static void write_header(const std::filesystem::path& path, const json& header) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << header.dump(2) << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

static std::vector<int> header_dims(const json& header,
                                    const std::filesystem::path& path) {
  if (!header.contains("dims") || !header["dims"].is_array())
    throw io_error("header missing dims: " + path.string());
  std::vector<int> dims = header["dims"].get<std::vector<int>>();
  try {
    check_dims(dims);
  } catch (const std::invalid_argument& e) {
    throw io_error(std::string("bad dims in ") + path.string() + ": " + e.what());
  }
  return dims;
}

static void expect_key(const json& header, const char* key, const char* value,
                       const std::filesystem::path& path) {
  if (!header.contains(key) || header[key] != value)
    throw io_error(std::string("header key '") + key + "' must be '" + value +
                   "': " + path.string());
}

void write_volume(const Volume& v, const std::filesystem::path& header_path) {
  check_dims(v.dims);
  if (v.data.size() != element_count(v.dims))
    throw std::invalid_argument("volume data length does not match dims");
  if (!all_finite(v.data))
    throw std::invalid_argument("volume contains non-finite samples");
  json header = {{"dims", v.dims}, {"dtype", "f32"}, {"order", "row-major"}};
  write_header(header_path, header);
  write_bytes(raw_path_for(header_path), v.data.data(),
              v.data.size() * sizeof(float));
}

Volume read_volume(const std::filesystem::path& header_path) {
  const json header = read_header(header_path);
  expect_key(header, "dtype", "f32", header_path);
  expect_key(header, "order", "row-major", header_path);
  Volume v;
  v.dims = header_dims(header, header_path);
  const auto bytes = read_bytes(raw_path_for(header_path));
  const std::size_t expected = element_count(v.dims) * sizeof(float);
  if (bytes.size() != expected)
    throw io_error("payload size mismatch for " + header_path.string() +
                   ": expected " + std::to_string(expected) + " bytes, got " +
                   std::to_string(bytes.size()));
  v.data.resize(element_count(v.dims));
  std::memcpy(v.data.data(), bytes.data(), bytes.size());
  if (!all_finite(v.data))
    throw io_error("non-finite sample in " + header_path.string());
  return v;
}

void write_field(const RegistrationField& f,
                 const std::filesystem::path& header_path) {
  check_dims(f.dims);
  if (f.channels != f.rank())
    throw std::invalid_argument("field channels must equal rank");
  if (f.data.size() != element_count(f.dims) * static_cast<std::size_t>(f.channels))
    throw std::invalid_argument("field data length does not match dims");
  if (!all_finite(f.data))
    throw std::invalid_argument("field contains non-finite samples");
  json header = {{"dims", f.dims},
                 {"channels", f.channels},
                 {"dtype", "f32"},
                 {"order", "row-major"},
                 {"layout", "interleaved"}};
  write_header(header_path, header);
  write_bytes(raw_path_for(header_path), f.data.data(),
              f.data.size() * sizeof(float));
}

RegistrationField read_field(const std::filesystem::path& header_path) {
  const json header = read_header(header_path);
  expect_key(header, "dtype", "f32", header_path);
  expect_key(header, "order", "row-major", header_path);
  expect_key(header, "layout", "interleaved", header_path);
  RegistrationField f;
  f.dims = header_dims(header, header_path);
  if (!header.contains("channels") || !header["channels"].is_number_integer())
    throw io_error("field header missing channels: " + header_path.string());
  f.channels = header["channels"].get<int>();
  if (f.channels != f.rank())
    throw io_error("field channels must equal rank: " + header_path.string());
  const auto bytes = read_bytes(raw_path_for(header_path));
  const std::size_t count = element_count(f.dims) * static_cast<std::size_t>(f.channels);
  if (bytes.size() != count * sizeof(float))
    throw io_error("payload size mismatch for " + header_path.string());
  f.data.resize(count);
  std::memcpy(f.data.data(), bytes.data(), bytes.size());
  if (!all_finite(f.data))
    throw io_error("non-finite sample in " + header_path.string());
  return f;
}

void write_mask(const LabelMask& m, const std::filesystem::path& header_path) {
  check_dims(m.dims);
  if (m.labels.size() != element_count(m.dims))
    throw std::invalid_argument("mask label count does not match dims");
  json header = {{"dims", m.dims}, {"dtype", "u16"}, {"order", "row-major"}};
  write_header(header_path, header);
  write_bytes(raw_path_for(header_path), m.labels.data(),
              m.labels.size() * sizeof(std::uint16_t));
}

LabelMask read_mask(const std::filesystem::path& header_path) {
  const json header = read_header(header_path);
  expect_key(header, "dtype", "u16", header_path);
  expect_key(header, "order", "row-major", header_path);
  LabelMask m;
  m.dims = header_dims(header, header_path);
  const auto bytes = read_bytes(raw_path_for(header_path));
  const std::size_t expected = element_count(m.dims) * sizeof(std::uint16_t);
  if (bytes.size() != expected)
    throw io_error("payload size mismatch for " + header_path.string());
  m.labels.resize(element_count(m.dims));
  std::memcpy(m.labels.data(), bytes.data(), bytes.size());
  return m;
}

// ---------------------------------------------------------------------------
// Field resampling

std::vector<int> half_dims(const std::vector<int>& dims) {
  std::vector<int> out(dims.size());
  for (std::size_t a = 0; a < dims.size(); ++a) out[a] = (dims[a] + 1) / 2;
  return out;
}

RegistrationField downsample_field(const RegistrationField& field, int factor) {
  check_dims(field.dims);
  if (factor < 2) throw std::invalid_argument("downsample factor must be >= 2");
  for (int d : field.dims)
    if (d < 2) throw std::invalid_argument("downsample requires extents >= 2");

  const int rank = field.rank();
  std::vector<int> coarse_dims(field.dims.size());
  for (std::size_t a = 0; a < field.dims.size(); ++a)
    coarse_dims[a] = (field.dims[a] + factor - 1) / factor;

  RegistrationField out = RegistrationField::zeros(coarse_dims);
  const auto fine_strides = row_major_strides(field.dims);
  const std::size_t n = out.voxels();
  std::vector<int> coord(field.dims.size());
  const double scale = 1.0 / static_cast<double>(factor);
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, coarse_dims, coord.data());
    std::size_t fine = 0;
    for (int a = 0; a < rank; ++a)
      fine += static_cast<std::size_t>(coord[a]) * static_cast<std::size_t>(factor) *
              fine_strides[a];
    for (int c = 0; c < rank; ++c)
      out.value(v, c) = static_cast<float>(field.value(fine, c) * scale);
  }
  return out;
}

// Samples one channel of an interleaved field multilinearly at continuous
// position p (clamped to the grid).
static double sample_channel(const RegistrationField& f,
                             const std::vector<std::size_t>& strides,
                             const double* p, int channel) {
  const int rank = f.rank();
  int base[3] = {0, 0, 0};
  double w[3] = {0.0, 0.0, 0.0};
  for (int a = 0; a < rank; ++a) {
    const double ext = static_cast<double>(f.dims[a]);
    double pc = std::clamp(p[a], 0.0, ext - 1.0);
    int i = static_cast<int>(std::floor(pc));
    i = std::min(i, f.dims[a] - 2);
    if (i < 0) i = 0;
    base[a] = i;
    w[a] = f.dims[a] == 1 ? 0.0 : pc - static_cast<double>(i);
  }
  const int corners = 1 << rank;
  double acc = 0.0;
  for (int mask = 0; mask < corners; ++mask) {
    double weight = 1.0;
    std::size_t voxel = 0;
    for (int a = 0; a < rank; ++a) {
      const int bit = (mask >> a) & 1;
      weight *= bit ? w[a] : 1.0 - w[a];
      const int idx = std::min(base[a] + bit, f.dims[a] - 1);
      voxel += static_cast<std::size_t>(idx) * strides[a];
    }
    acc += weight * static_cast<double>(f.value(voxel, channel));
  }
  return acc;
}

RegistrationField upsample_field(const RegistrationField& field,
                                 const std::vector<int>& target_dims) {
  check_dims(field.dims);
  check_dims(target_dims);
  if (target_dims.size() != field.dims.size())
    throw std::invalid_argument("upsample rank mismatch");
  for (std::size_t a = 0; a < target_dims.size(); ++a)
    if (target_dims[a] < field.dims[a])
      throw std::invalid_argument("upsample target smaller than source");

  const int rank = field.rank();
  double scale[3] = {1.0, 1.0, 1.0};
  for (int a = 0; a < rank; ++a)
    scale[a] = static_cast<double>(target_dims[a]) / static_cast<double>(field.dims[a]);

  RegistrationField out = RegistrationField::zeros(target_dims);
  const auto src_strides = row_major_strides(field.dims);
  const std::size_t n = out.voxels();
  std::vector<int> coord(target_dims.size());
  double p[3];
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, target_dims, coord.data());
    for (int a = 0; a < rank; ++a) p[a] = static_cast<double>(coord[a]) / scale[a];
    for (int c = 0; c < rank; ++c)
      out.value(v, c) =
          static_cast<float>(scale[c] * sample_channel(field, src_strides, p, c));
  }
  return out;
}

RegistrationField upsample_field_adjoint(const RegistrationField& fine_gradient,
                                         const std::vector<int>& source_dims) {
  check_dims(fine_gradient.dims);
  check_dims(source_dims);
  if (source_dims.size() != fine_gradient.dims.size())
    throw std::invalid_argument("adjoint rank mismatch");
  for (std::size_t a = 0; a < source_dims.size(); ++a)
    if (fine_gradient.dims[a] < source_dims[a])
      throw std::invalid_argument("adjoint target smaller than source");

  const int rank = fine_gradient.rank();
  double scale[3] = {1.0, 1.0, 1.0};
  for (int a = 0; a < rank; ++a)
    scale[a] = static_cast<double>(fine_gradient.dims[a]) /
               static_cast<double>(source_dims[a]);

  // Accumulate in double, then round once.
  std::vector<double> acc(element_count(source_dims) * static_cast<std::size_t>(rank),
                          0.0);
  const auto src_strides = row_major_strides(source_dims);
  const std::size_t n = fine_gradient.voxels();
  std::vector<int> coord(fine_gradient.dims.size());
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, fine_gradient.dims, coord.data());
    int base[3] = {0, 0, 0};
    double w[3] = {0.0, 0.0, 0.0};
    for (int a = 0; a < rank; ++a) {
      const double ext = static_cast<double>(source_dims[a]);
      double pc = std::clamp(static_cast<double>(coord[a]) / scale[a], 0.0, ext - 1.0);
      int i = static_cast<int>(std::floor(pc));
      i = std::min(i, source_dims[a] - 2);
      if (i < 0) i = 0;
      base[a] = i;
      w[a] = source_dims[a] == 1 ? 0.0 : pc - static_cast<double>(i);
    }
    const int corners = 1 << rank;
    for (int mask = 0; mask < corners; ++mask) {
      double weight = 1.0;
      std::size_t voxel = 0;
      for (int a = 0; a < rank; ++a) {
        const int bit = (mask >> a) & 1;
        weight *= bit ? w[a] : 1.0 - w[a];
        const int idx = std::min(base[a] + bit, source_dims[a] - 1);
        voxel += static_cast<std::size_t>(idx) * src_strides[a];
      }
      for (int c = 0; c < rank; ++c)
        acc[voxel * static_cast<std::size_t>(rank) + c] +=
            scale[c] * weight * static_cast<double>(fine_gradient.value(v, c));
    }
  }

  RegistrationField out = RegistrationField::zeros(source_dims);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.data[i] = static_cast<float>(acc[i]);
  return out;
}

std::vector<double> gaussian_blur(const std::vector<double>& data,
                                  const std::vector<int>& dims, double sigma) {
  check_dims(dims);
  if (data.size() != element_count(dims))
    throw std::invalid_argument("gaussian_blur: data length does not match dims");
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be > 0");

  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& w : kernel) w /= total;

  const auto strides = row_major_strides(dims);
  std::vector<double> src = data;
  std::vector<double> dst(data.size());
  std::vector<int> coord(dims.size());
  for (std::size_t a = 0; a < dims.size(); ++a) {
    for (std::size_t v = 0; v < src.size(); ++v) {
      unravel_index(v, dims, coord.data());
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int idx = std::clamp(coord[a] + k, 0, dims[a] - 1);
        const auto flat = static_cast<std::size_t>(
            static_cast<std::ptrdiff_t>(v) +
            static_cast<std::ptrdiff_t>(idx - coord[a]) *
                static_cast<std::ptrdiff_t>(strides[a]));
        acc += kernel[k + radius] * src[flat];
      }
      dst[v] = acc;
    }
    std::swap(src, dst);
  }
  return src;
}

}  // namespace pirate
