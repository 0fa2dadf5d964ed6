#include "tcnn/filter_bank.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>

namespace tcnn {

double eval_gabor(const GaborParams& g, double x, double y) {
  const double xr = x * std::cos(g.omega) + y * std::sin(g.omega);
  const double carrier = std::cos(kTwoPi * xr / g.lambda + g.psi);
  if (!g.sigma) return carrier;
  const double yr = -x * std::sin(g.omega) + y * std::cos(g.omega);
  const double s = *g.sigma;
  return std::exp(-(xr * xr + g.gamma * g.gamma * yr * yr) / (2.0 * s * s)) * carrier;
}

GaborParams gabor_from_klein(const KleinPoint& p) {
  GaborParams g;
  g.lambda = 2.0 + 4.0 / kPi * p.theta2;
  g.omega = p.theta1;
  g.psi = p.theta2 + kPi;
  g.sigma.reset();
  g.gamma = 0.0;
  return g;
}

std::vector<GaborParams> reference_gabor_family() {
  const std::array<double, 4> angles{kPi / 4, 3 * kPi / 4, 5 * kPi / 4, 7 * kPi / 4};
  std::vector<GaborParams> family;
  for (double omega : angles) {
    for (double psi : angles) {
      GaborParams g;
      g.lambda = kPi;
      g.omega = omega;
      g.psi = psi;
      g.sigma = kTwoPi;
      g.gamma = kPi / 8;
      family.push_back(g);
    }
  }
  return family;
}

std::string_view to_string(BankKind kind) {
  switch (kind) {
  case BankKind::circle: return "CF";
  case BankKind::klein: return "KF";
  case BankKind::moving_klein: return "M-F";
  case BankKind::gabor: return "Gabor";
  }
  return "?";
}

std::span<const double> FilterBank::values(std::size_t i) const {
  if (!volumetric.empty()) return volumetric.at(i).values;
  return planar.at(i).values;
}

FilterBank make_cf_bank(std::size_t n, std::size_t k, CellNormalization norm) {
  FilterBank bank;
  bank.kind = BankKind::circle;
  bank.kernel_size = k;
  for (const CirclePoint& p : discretize_circle(n)) {
    bank.points.emplace_back(p);
    bank.planar.push_back(
        discretize_patch([&](double x, double y) { return eval_circle(p.theta, x, y); }, k, norm));
  }
  return bank;
}

FilterBank make_kf_bank(std::size_t n1, std::size_t n2, std::size_t k, CellNormalization norm) {
  FilterBank bank;
  bank.kind = BankKind::klein;
  bank.kernel_size = k;
  for (const KleinPoint& p : discretize_klein(n1, n2)) {
    bank.points.emplace_back(p);
    bank.planar.push_back(
        discretize_patch([&](double x, double y) { return eval_klein(p, x, y); }, k, norm));
  }
  return bank;
}

FilterBank make_mf_bank(std::span<const Submanifold> tags, std::size_t n1, std::size_t n2,
                        std::size_t k, CellNormalization norm) {
  if (tags.empty()) throw DomainError("M-F bank needs at least one submanifold tag");
  FilterBank bank;
  bank.kind = BankKind::moving_klein;
  bank.kernel_size = k;
  bank.tags.assign(tags.begin(), tags.end());
  for (Submanifold tag : tags) {
    for (const TangentKleinPoint& q : discretize_submanifold(tag, n1, n2)) {
      bank.points.emplace_back(q);
      bank.volumetric.push_back(discretize_video_patch(
          [&](double x, double y, double t) { return eval_tangent_klein(q, x, y, t); }, k, norm));
    }
  }
  return bank;
}

FilterBank make_gabor_bank(std::span<const GaborParams> params, std::size_t k,
                           CellNormalization norm) {
  FilterBank bank;
  bank.kind = BankKind::gabor;
  bank.kernel_size = k;
  for (const GaborParams& g : params) {
    if (!(g.lambda > 0.0))
      throw DomainError("Gabor wavelength must be positive, got " + std::to_string(g.lambda));
    bank.points.emplace_back(g);
    bank.planar.push_back(
        discretize_patch([&](double x, double y) { return eval_gabor(g, x, y); }, k, norm));
  }
  return bank;
}

namespace {

std::array<double, 6> coordinates(const BankPoint& point) {
  struct Visitor {
    std::array<double, 6> operator()(const CirclePoint& p) const { return {p.theta, 0, 0, 0, 0, 0}; }
    std::array<double, 6> operator()(const KleinPoint& p) const {
      return {p.theta1, p.theta2, 0, 0, 0, 0};
    }
    std::array<double, 6> operator()(const TangentKleinPoint& q) const {
      return {q.base.theta1, q.base.theta2, q.base.r, q.u, q.v, q.w};
    }
    std::array<double, 6> operator()(const GaborParams&) const { return {0, 0, 0, 0, 0, 0}; }
  };
  return std::visit(Visitor{}, point);
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

} // namespace

void write_bank_csv(const FilterBank& bank, const std::filesystem::path& path) {
  std::ofstream out = open_output(path, std::ios::out);
  const std::size_t count = bank.size() == 0 ? 0 : bank.values(0).size();
  out << "index,theta1,theta2,r,u,v,w";
  for (std::size_t i = 0; i < count; ++i) out << ",v" << i;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < bank.size(); ++i) {
    out << i;
    for (double c : coordinates(bank.points[i])) {
      std::snprintf(buf, sizeof buf, ",%.17g", c);
      out << buf;
    }
    for (double v : bank.values(i)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path.string() + "'");
}

void write_pgm(std::span<const double> values, std::size_t width, std::size_t height,
               const std::filesystem::path& path) {
  if (values.size() != width * height) throw ShapeError("PGM size does not match value count");
  std::ofstream out = open_output(path, std::ios::out | std::ios::binary);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = (values.empty() ? 0.0 : *hi - *lo);
  for (double v : values) {
    const double scaled = range > 0.0 ? (v - *lo) / range * 255.0 : 128.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path.string() + "'");
}

std::vector<std::filesystem::path> dump_bank(const FilterBank& bank,
                                             const std::filesystem::path& dir,
                                             const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(DataError::Kind::io, "cannot create '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> files;
  files.push_back(dir / (prefix + ".csv"));
  write_bank_csv(bank, files.back());
  const std::size_t k = bank.kernel_size;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "_%03zu.pgm", i);
    const auto path = dir / (prefix + name);
    if (bank.dims() == 2) {
      write_pgm(bank.values(i), k, k, path);
    } else {
      // Tile time slices horizontally: pixel (row m, col p*k + n).
      std::vector<double> tiled(k * k * k);
      const auto v = bank.values(i);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t m = 0; m < k; ++m)
          for (std::size_t n = 0; n < k; ++n) tiled[m * k * k + p * k + n] = v[(p * k + m) * k + n];
      write_pgm(tiled, k * k, k, path);
    }
    files.push_back(path);
  }
  return files;
}

} // namespace tcnn
