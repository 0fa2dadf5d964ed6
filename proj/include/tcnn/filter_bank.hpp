#pragma once

// Fixed convolution filters obtained by averaging a patch embedding over the
// cells of a k x k (or k x k x k) grid on [-1,1]^2 ([-1,1]^3 for video).
//
// Index convention: n indexes x (columns), m indexes y (rows), p indexes time.
// Row 0 is y = -1, column 0 is x = -1, slice 0 is t = -1. 2D values are stored
// row-major as values[m*k + n]; 3D values as values[(p*k + m)*k + n].

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tcnn/error.hpp"
#include "tcnn/geometry.hpp"

namespace tcnn {

/// Whether a filter entry is the integral over its cell or the integral
/// divided by the cell volume. Banks default to averages.
enum class CellNormalization { average, integral };

struct FilterGrid2D {
  std::size_t size = 0;
  std::vector<double> values;

  double at(std::size_t m, std::size_t n) const { return values[m * size + n]; }
};

struct FilterGrid3D {
  std::size_t size = 0;
  std::vector<double> values;

  double at(std::size_t p, std::size_t m, std::size_t n) const {
    return values[(p * size + m) * size + n];
  }
};

/// Parameters of g(lambda, omega, psi, sigma, gamma). A missing sigma means
/// no Gaussian envelope (sigma = infinity), which also drops gamma.
struct GaborParams {
  double lambda = 1.0;
  double omega = 0.0;
  double psi = 0.0;
  std::optional<double> sigma;
  double gamma = 0.0;
};

double eval_gabor(const GaborParams& g, double x, double y);

/// The Gabor filter paired with a Klein point: lambda = 2 + 4 theta2 / pi,
/// omega = theta1, psi = theta2 + pi, no envelope.
GaborParams gabor_from_klein(const KleinPoint& p);

/// The 16-filter comparison family: sigma = 2pi, lambda = pi, gamma = pi/8,
/// omega and psi each in {pi/4, 3pi/4, 5pi/4, 7pi/4} (omega-major order).
std::vector<GaborParams> reference_gabor_family();

enum class BankKind { circle, klein, moving_klein, gabor };

std::string_view to_string(BankKind kind);

using BankPoint = std::variant<CirclePoint, KleinPoint, TangentKleinPoint, GaborParams>;

/// Filters plus the manifold point each one was generated from. Exactly one of
/// `planar` / `volumetric` is populated.
struct FilterBank {
  BankKind kind = BankKind::circle;
  std::size_t kernel_size = 0;
  std::vector<Submanifold> tags;  ///< moving_klein banks only
  std::vector<BankPoint> points;
  std::vector<FilterGrid2D> planar;
  std::vector<FilterGrid3D> volumetric;

  std::size_t size() const noexcept { return points.size(); }
  std::size_t dims() const noexcept { return volumetric.empty() ? 2 : 3; }
  /// Flattened values of filter i, in the layout described at the top of this file.
  std::span<const double> values(std::size_t i) const;
};

namespace detail {
inline void check_cell(std::size_t k, std::initializer_list<std::size_t> idx) {
  if (k == 0 || k % 2 == 0)
    throw DomainError("kernel size must be odd, got " + std::to_string(k));
  for (std::size_t i : idx)
    if (i >= k) throw DomainError("cell index out of range");
}
inline double cell_lo(std::size_t i, std::size_t k) {
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(k);
}
inline double cell_hi(std::size_t i, std::size_t k) {
  return -1.0 + 2.0 * static_cast<double>(i + 1) / static_cast<double>(k);
}
} // namespace detail

/// Average (or integral) of f(x, y) over cell (n, m) of the k x k grid.
template <typename F>
double cell_average_2d(F&& f, std::size_t n, std::size_t m, std::size_t k,
                       const QuadratureRule& rule = QuadratureRule::standard(),
                       CellNormalization norm = CellNormalization::average) {
  detail::check_cell(k, {n, m});
  const double x0 = detail::cell_lo(n, k), x1 = detail::cell_hi(n, k);
  const double y0 = detail::cell_lo(m, k), y1 = detail::cell_hi(m, k);
  const double integral = rule.integrate(
      [&](double y) { return rule.integrate([&](double x) { return f(x, y); }, x0, x1); }, y0, y1);
  if (norm == CellNormalization::integral) return integral;
  return integral / ((x1 - x0) * (y1 - y0));
}

/// Average (or integral) of f(x, y, t) over cell (n, m, p); t is the third axis.
template <typename F>
double cell_average_3d(F&& f, std::size_t n, std::size_t m, std::size_t p, std::size_t k,
                       const QuadratureRule& rule = QuadratureRule::standard(),
                       CellNormalization norm = CellNormalization::average) {
  detail::check_cell(k, {n, m, p});
  const double x0 = detail::cell_lo(n, k), x1 = detail::cell_hi(n, k);
  const double y0 = detail::cell_lo(m, k), y1 = detail::cell_hi(m, k);
  const double t0 = detail::cell_lo(p, k), t1 = detail::cell_hi(p, k);
  const double integral = rule.integrate(
      [&](double t) {
        return rule.integrate(
            [&](double y) {
              return rule.integrate([&](double x) { return f(x, y, t); }, x0, x1);
            },
            y0, y1);
      },
      t0, t1);
  if (norm == CellNormalization::integral) return integral;
  return integral / ((x1 - x0) * (y1 - y0) * (t1 - t0));
}

/// Discretizes any patch function f(x, y) onto a k x k grid.
template <typename F>
FilterGrid2D discretize_patch(F&& f, std::size_t k,
                              CellNormalization norm = CellNormalization::average) {
  FilterGrid2D grid{k, std::vector<double>(k * k)};
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t n = 0; n < k; ++n)
      grid.values[m * k + n] = cell_average_2d(f, n, m, k, QuadratureRule::standard(), norm);
  return grid;
}

template <typename F>
FilterGrid3D discretize_video_patch(F&& f, std::size_t k,
                                    CellNormalization norm = CellNormalization::average) {
  FilterGrid3D grid{k, std::vector<double>(k * k * k)};
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t n = 0; n < k; ++n)
        grid.values[(p * k + m) * k + n] =
            cell_average_3d(f, n, m, p, k, QuadratureRule::standard(), norm);
  return grid;
}

/// Circle Features: n filters at the n-th roots of unity.
FilterBank make_cf_bank(std::size_t n, std::size_t k,
                        CellNormalization norm = CellNormalization::average);

/// Klein Features on the discretize_klein(n1, n2) grid.
FilterBank make_kf_bank(std::size_t n1, std::size_t n2, std::size_t k,
                        CellNormalization norm = CellNormalization::average);

/// M-Features: union over `tags` (in the given order) of 3D filters on each
/// tag's discretize_submanifold(n1, n2) grid.
FilterBank make_mf_bank(std::span<const Submanifold> tags, std::size_t n1, std::size_t n2,
                        std::size_t k, CellNormalization norm = CellNormalization::average);

/// Throws DomainError if any lambda <= 0.
FilterBank make_gabor_bank(std::span<const GaborParams> params, std::size_t k,
                           CellNormalization norm = CellNormalization::average);

// --- dumps ----------------------------------------------------------------------

/// CSV with header `index,theta1,theta2,r,u,v,w,values...`; coordinates a
/// point does not have are written as 0.
void write_bank_csv(const FilterBank& bank, const std::filesystem::path& path);

/// Binary 8-bit PGM (P5) of a width x height grid, affinely rescaled so the
/// minimum maps to 0 and the maximum to 255 (constant grids map to 128).
void write_pgm(std::span<const double> values, std::size_t width, std::size_t height,
               const std::filesystem::path& path);

/// Writes `<prefix>.csv` and one `<prefix>_NNN.pgm` per filter into dir
/// (created on demand). 3D filters are tiled with time running left to right.
std::vector<std::filesystem::path> dump_bank(const FilterBank& bank,
                                             const std::filesystem::path& dir,
                                             const std::string& prefix);

} // namespace tcnn
