#include "pirate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pirate {

namespace {

void check_same_dims(const std::vector<int>& a, const std::vector<int>& b,
                     const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dims differ");
}

struct ImageStats {
  double mean_f = 0.0, mean_w = 0.0;
  double sigma_f = 0.0, sigma_w = 0.0;
  double cross = 0.0;  // sum of centered products
};

ImageStats image_stats(const Volume& f, const Volume& w) {
  const std::size_t n = f.size();
  double sum_f = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_f += static_cast<double>(f.data[i]);
    sum_w += static_cast<double>(w.data[i]);
  }
  ImageStats s;
  s.mean_f = sum_f / static_cast<double>(n);
  s.mean_w = sum_w / static_cast<double>(n);
  double ff = 0.0, ww = 0.0, fw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double df = static_cast<double>(f.data[i]) - s.mean_f;
    const double dw = static_cast<double>(w.data[i]) - s.mean_w;
    ff += df * df;
    ww += dw * dw;
    fw += df * dw;
  }
  s.sigma_f = std::sqrt(ff / static_cast<double>(n));
  s.sigma_w = std::sqrt(ww / static_cast<double>(n));
  s.cross = fw;
  return s;
}

}  // namespace

double gcc(const Volume& fixed, const Volume& warped) {
  check_same_dims(fixed.dims, warped.dims, "gcc");
  if (fixed.size() < 2) throw std::invalid_argument("gcc: needs at least 2 voxels");
  const ImageStats s = image_stats(fixed, warped);
  const double den = std::max(s.sigma_f * s.sigma_w, kSigmaFloor);
  return 1.0 - s.cross / (static_cast<double>(fixed.size()) * den);
}

RegistrationField gcc_gradient(const Volume& fixed, const Volume& moving,
                               const RegistrationField& field) {
  check_same_dims(fixed.dims, moving.dims, "gcc_gradient");
  Volume warped;
  RegistrationField slope;
  warp_with_gradient(moving, field, warped, slope);

  const ImageStats s = image_stats(fixed, warped);
  const double n = static_cast<double>(fixed.size());
  const bool floored = s.sigma_f * s.sigma_w < kSigmaFloor;

  RegistrationField grad = RegistrationField::zeros(field.dims);
  const int rank = field.rank();
  for (std::size_t v = 0; v < fixed.size(); ++v) {
    const double df = static_cast<double>(fixed.data[v]) - s.mean_f;
    const double dw = static_cast<double>(warped.data[v]) - s.mean_w;
    double d_dw;
    if (floored) {
      d_dw = -df / (n * kSigmaFloor);
    } else {
      d_dw = -df / (n * s.sigma_f * s.sigma_w) +
             s.cross * dw /
                 (n * n * s.sigma_f * s.sigma_w * s.sigma_w * s.sigma_w);
    }
    for (int c = 0; c < rank; ++c)
      grad.value(v, c) =
          static_cast<float>(d_dw * static_cast<double>(slope.value(v, c)));
  }
  return grad;
}

namespace {

void check_window(const std::vector<int>& dims, int window) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("ncc: window must be odd and >= 3");
  for (int d : dims)
    if (window > d)
      throw std::invalid_argument("ncc: window exceeds an image extent");
}

struct WindowStats {
  double mean_f, mean_w, sigma_f, sigma_w, cross;
  int count;
};

// Window statistics around a center voxel, clipped to the grid.
template <typename Visit>
void for_window(const std::vector<int>& dims,
                const std::vector<std::size_t>& strides, const int* center,
                int radius, Visit&& visit) {
  const int rank = static_cast<int>(dims.size());
  int lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0}, it[3] = {0, 0, 0};
  for (int a = 0; a < rank; ++a) {
    lo[a] = std::max(0, center[a] - radius);
    hi[a] = std::min(dims[a] - 1, center[a] + radius);
    it[a] = lo[a];
  }
  while (true) {
    std::size_t flat = 0;
    for (int a = 0; a < rank; ++a)
      flat += static_cast<std::size_t>(it[a]) * strides[a];
    visit(flat);
    int a = rank - 1;
    while (a >= 0) {
      if (++it[a] <= hi[a]) break;
      it[a] = lo[a];
      --a;
    }
    if (a < 0) break;
  }
}

WindowStats window_stats(const Volume& f, const Volume& w,
                         const std::vector<std::size_t>& strides,
                         const int* center, int radius) {
  double sum_f = 0.0, sum_w = 0.0;
  int count = 0;
  for_window(f.dims, strides, center, radius, [&](std::size_t i) {
    sum_f += static_cast<double>(f.data[i]);
    sum_w += static_cast<double>(w.data[i]);
    ++count;
  });
  WindowStats s{};
  s.count = count;
  s.mean_f = sum_f / count;
  s.mean_w = sum_w / count;
  double ff = 0.0, ww = 0.0, fw = 0.0;
  for_window(f.dims, strides, center, radius, [&](std::size_t i) {
    const double df = static_cast<double>(f.data[i]) - s.mean_f;
    const double dw = static_cast<double>(w.data[i]) - s.mean_w;
    ff += df * df;
    ww += dw * dw;
    fw += df * dw;
  });
  s.sigma_f = std::sqrt(ff / count);
  s.sigma_w = std::sqrt(ww / count);
  s.cross = fw;
  return s;
}

}  // namespace

double ncc(const Volume& fixed, const Volume& warped, int window) {
  check_same_dims(fixed.dims, warped.dims, "ncc");
  check_window(fixed.dims, window);
  const int radius = window / 2;
  const auto strides = row_major_strides(fixed.dims);
  const std::size_t n = fixed.size();
  std::vector<int> coord(fixed.dims.size());
  double acc = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, fixed.dims, coord.data());
    const WindowStats s = window_stats(fixed, warped, strides, coord.data(), radius);
    const double den = std::max(s.sigma_f * s.sigma_w, kSigmaFloor);
    acc += s.cross / (static_cast<double>(s.count) * den);
  }
  return 1.0 - acc / static_cast<double>(n);
}

RegistrationField ncc_gradient(const Volume& fixed, const Volume& moving,
                               const RegistrationField& field, int window) {
  check_same_dims(fixed.dims, moving.dims, "ncc_gradient");
  check_window(fixed.dims, window);
  Volume warped;
  RegistrationField slope;
  warp_with_gradient(moving, field, warped, slope);

  const int radius = window / 2;
  const auto strides = row_major_strides(fixed.dims);
  const std::size_t n = fixed.size();
  std::vector<int> coord(fixed.dims.size());
  std::vector<double> d_dw(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, fixed.dims, coord.data());
    const WindowStats s = window_stats(fixed, warped, strides, coord.data(), radius);
    const double k = static_cast<double>(s.count);
    const bool floored = s.sigma_f * s.sigma_w < kSigmaFloor;
    for_window(fixed.dims, strides, coord.data(), radius, [&](std::size_t i) {
      const double df = static_cast<double>(fixed.data[i]) - s.mean_f;
      const double dw = static_cast<double>(warped.data[i]) - s.mean_w;
      double d_corr;
      if (floored) {
        d_corr = df / (k * kSigmaFloor);
      } else {
        d_corr = df / (k * s.sigma_f * s.sigma_w) -
                 s.cross * dw /
                     (k * k * s.sigma_f * s.sigma_w * s.sigma_w * s.sigma_w);
      }
      d_dw[i] -= d_corr / static_cast<double>(n);
    });
  }

  RegistrationField grad = RegistrationField::zeros(field.dims);
  const int rank = field.rank();
  for (std::size_t v = 0; v < n; ++v)
    for (int c = 0; c < rank; ++c)
      grad.value(v, c) =
          static_cast<float>(d_dw[v] * static_cast<double>(slope.value(v, c)));
  return grad;
}

double smoothness(const RegistrationField& field) {
  for (int d : field.dims)
    if (d < 2) throw std::invalid_argument("smoothness: extents must be >= 2");
  const int rank = field.rank();
  const auto strides = row_major_strides(field.dims);
  const std::size_t n = field.voxels();
  std::vector<int> coord(field.dims.size());
  double total = 0.0;
  for (int a = 0; a < rank; ++a) {
    const std::size_t valid =
        n / static_cast<std::size_t>(field.dims[a]) *
        static_cast<std::size_t>(field.dims[a] - 1);
    double axis_acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      unravel_index(v, field.dims, coord.data());
      if (coord[a] + 1 >= field.dims[a]) continue;
      const std::size_t w = v + strides[a];
      for (int c = 0; c < rank; ++c) {
        const double d = static_cast<double>(field.value(w, c)) -
                         static_cast<double>(field.value(v, c));
        axis_acc += d * d;
      }
    }
    total += axis_acc / static_cast<double>(valid);
  }
  return total;
}

RegistrationField smoothness_gradient(const RegistrationField& field) {
  for (int d : field.dims)
    if (d < 2) throw std::invalid_argument("smoothness: extents must be >= 2");
  const int rank = field.rank();
  const auto strides = row_major_strides(field.dims);
  const std::size_t n = field.voxels();
  std::vector<int> coord(field.dims.size());
  std::vector<double> acc(field.data.size(), 0.0);
  for (int a = 0; a < rank; ++a) {
    const std::size_t valid =
        n / static_cast<std::size_t>(field.dims[a]) *
        static_cast<std::size_t>(field.dims[a] - 1);
    const double scale = 2.0 / static_cast<double>(valid);
    for (std::size_t v = 0; v < n; ++v) {
      unravel_index(v, field.dims, coord.data());
      if (coord[a] + 1 >= field.dims[a]) continue;
      const std::size_t w = v + strides[a];
      for (int c = 0; c < rank; ++c) {
        const double d = static_cast<double>(field.value(w, c)) -
                         static_cast<double>(field.value(v, c));
        acc[w * rank + c] += scale * d;
        acc[v * rank + c] -= scale * d;
      }
    }
  }
  RegistrationField grad = RegistrationField::zeros(field.dims);
  for (std::size_t i = 0; i < acc.size(); ++i)
    grad.data[i] = static_cast<float>(acc[i]);
  return grad;
}

namespace {

// du_r/dx_c at voxel v: forward difference, backward at the far boundary.
// Returns the difference and the two voxel indices (plus, minus) involved.
struct Diff {
  double value;
  std::size_t plus, minus;
};

inline Diff axis_difference(const RegistrationField& f,
                            const std::vector<std::size_t>& strides,
                            std::size_t v, const int* coord, int r, int c) {
  Diff d;
  if (coord[c] + 1 < f.dims[c]) {
    d.plus = v + strides[c];
    d.minus = v;
  } else {
    d.plus = v;
    d.minus = v - strides[c];
  }
  d.value = static_cast<double>(f.value(d.plus, r)) -
            static_cast<double>(f.value(d.minus, r));
  return d;
}

inline double det2(const double m[3][3]) {
  return m[0][0] * m[1][1] - m[0][1] * m[1][0];
}

inline double det3(const double m[3][3]) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// dDet/dM, i.e. the cofactor matrix.
inline void cofactor2(const double m[3][3], double c[3][3]) {
  c[0][0] = m[1][1];
  c[0][1] = -m[1][0];
  c[1][0] = -m[0][1];
  c[1][1] = m[0][0];
}

inline void cofactor3(const double m[3][3], double c[3][3]) {
  c[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
  c[0][1] = -(m[1][0] * m[2][2] - m[1][2] * m[2][0]);
  c[0][2] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
  c[1][0] = -(m[0][1] * m[2][2] - m[0][2] * m[2][1]);
  c[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
  c[1][2] = -(m[0][0] * m[2][1] - m[0][1] * m[2][0]);
  c[2][0] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
  c[2][1] = -(m[0][0] * m[1][2] - m[0][2] * m[1][0]);
  c[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
}

}  // namespace

JacobianMap jacobian_map(const RegistrationField& field) {
  for (int d : field.dims)
    if (d < 2) throw std::invalid_argument("jacobian_map: extents must be >= 2");
  const int rank = field.rank();
  const auto strides = row_major_strides(field.dims);
  const std::size_t n = field.voxels();
  std::vector<int> coord(field.dims.size());
  JacobianMap map;
  map.dims = field.dims;
  map.values.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, field.dims, coord.data());
    double m[3][3] = {{0}};
    for (int r = 0; r < rank; ++r)
      for (int c = 0; c < rank; ++c) {
        const Diff d = axis_difference(field, strides, v, coord.data(), r, c);
        m[r][c] = (r == c ? 1.0 : 0.0) + d.value;
      }
    map.values[v] = rank == 2 ? det2(m) : det3(m);
  }
  return map;
}

double negative_jd_ratio(const JacobianMap& map) {
  if (map.values.empty()) return 0.0;
  std::size_t folded = 0;
  for (double j : map.values)
    if (j < 0.0) ++folded;
  return static_cast<double>(folded) / static_cast<double>(map.values.size());
}

double jacobian_loss(const RegistrationField& field) {
  const JacobianMap map = jacobian_map(field);
  double acc = 0.0;
  for (double j : map.values) {
    const double neg = std::max(0.0, -j);
    acc += neg * neg;
  }
  return acc / static_cast<double>(map.values.size());
}

RegistrationField jacobian_loss_gradient(const RegistrationField& field) {
  for (int d : field.dims)
    if (d < 2) throw std::invalid_argument("jacobian_map: extents must be >= 2");
  const int rank = field.rank();
  const auto strides = row_major_strides(field.dims);
  const std::size_t n = field.voxels();
  std::vector<int> coord(field.dims.size());
  std::vector<double> acc(field.data.size(), 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    unravel_index(v, field.dims, coord.data());
    double m[3][3] = {{0}};
    Diff diffs[3][3];
    for (int r = 0; r < rank; ++r)
      for (int c = 0; c < rank; ++c) {
        diffs[r][c] = axis_difference(field, strides, v, coord.data(), r, c);
        m[r][c] = (r == c ? 1.0 : 0.0) + diffs[r][c].value;
      }
    const double det = rank == 2 ? det2(m) : det3(m);
    if (det >= 0.0) continue;
    // d/dJ of relu(-J)^2 / n at J < 0.
    const double coeff = 2.0 * det / static_cast<double>(n);
    double cof[3][3];
    if (rank == 2)
      cofactor2(m, cof);
    else
      cofactor3(m, cof);
    for (int r = 0; r < rank; ++r)
      for (int c = 0; c < rank; ++c) {
        const double w = coeff * cof[r][c];
        acc[diffs[r][c].plus * rank + r] += w;
        acc[diffs[r][c].minus * rank + r] -= w;
      }
  }
  RegistrationField grad = RegistrationField::zeros(field.dims);
  for (std::size_t i = 0; i < acc.size(); ++i)
    grad.data[i] = static_cast<float>(acc[i]);
  return grad;
}

DiceResult dsc(const LabelMask& a, const LabelMask& b,
               const std::vector<std::uint16_t>& labels) {
  check_same_dims(a.dims, b.dims, "dsc");
  struct Counts {
    std::size_t in_a = 0, in_b = 0, shared = 0;
  };
  std::map<std::uint16_t, Counts> counts;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const std::uint16_t la = a.labels[i];
    const std::uint16_t lb = b.labels[i];
    if (la != 0) ++counts[la].in_a;
    if (lb != 0) ++counts[lb].in_b;
    if (la != 0 && la == lb) ++counts[la].shared;
  }

  std::vector<std::uint16_t> wanted = labels;
  if (wanted.empty())
    for (const auto& [label, c] : counts) wanted.push_back(label);

  DiceResult result;
  double sum = 0.0;
  for (std::uint16_t label : wanted) {
    const auto it = counts.find(label);
    if (it == counts.end()) continue;  // empty in both masks, skipped
    const Counts& c = it->second;
    const double denom = static_cast<double>(c.in_a + c.in_b);
    if (denom == 0.0) continue;
    const double dice = 2.0 * static_cast<double>(c.shared) / denom;
    result.per_label.emplace_back(label, dice);
    sum += dice;
  }
  result.mean = result.per_label.empty()
                    ? 0.0
                    : sum / static_cast<double>(result.per_label.size());
  return result;
}

}  // namespace pirate
