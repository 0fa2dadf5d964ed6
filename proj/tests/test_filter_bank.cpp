#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "oracles.hpp"
#include "tcnn/filter_bank.hpp"

using namespace tcnn;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tcnn_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

void check_planar_oracle(const FilterBank& bank, const std::function<double(std::size_t, double, double)>& f) {
  const std::size_t k = bank.kernel_size;
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t n = 0; n < k; ++n) {
        const double want = oracle::cell_average_2d([&](double x, double y) { return f(i, x, y); }, n, m, k);
        CHECK(oracle::rel_error(bank.planar[i].at(m, n), want) < 1e-6);
      }
}

} // namespace

TEST_SUITE("filter-bank") {

TEST_CASE("cell_average_2d closed forms") {
  auto x = [](double x, double) { return x; };
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(cell_average_2d(x, 0, m, 3) == doctest::Approx(-2.0 / 3).epsilon(1e-14));
    CHECK(std::abs(cell_average_2d(x, 1, m, 3)) < 1e-15);
    CHECK(cell_average_2d(x, 2, m, 3) == doctest::Approx(2.0 / 3).epsilon(1e-14));
  }
  auto q = [](double x, double) { return 2 * x * x - 1; };
  CHECK(cell_average_2d(q, 1, 1, 3) == doctest::Approx(-25.0 / 27).epsilon(1e-14));
  auto one = [](double, double) { return 1.0; };
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t n = 0; n < 5; ++n) CHECK(cell_average_2d(one, n, m, 5) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cell_average_2d(one, 0, 0, 3, QuadratureRule::standard(), CellNormalization::integral) ==
        doctest::Approx(4.0 / 9).epsilon(1e-14));
  CHECK_THROWS_AS(cell_average_2d(one, 0, 0, 4), DomainError);
  CHECK_THROWS_AS(cell_average_2d(one, 3, 0, 3), DomainError);
}

TEST_CASE("make_cf_bank") {
  const FilterBank bank = make_cf_bank(16, 5);
  CHECK(bank.size() == 16);
  CHECK(bank.kind == BankKind::circle);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(bank.values(i).size() == 25);
    double sum = 0.0;
    for (double v : bank.values(i)) {
      sum += v;
      CHECK(std::abs(v) <= std::sqrt(2.0));
    }
    CHECK(std::abs(sum) < 1e-9);
  }
  const FilterBank two = make_cf_bank(2, 3);
  for (std::size_t j = 0; j < 9; ++j) CHECK(two.planar[1].values[j] == doctest::Approx(-two.planar[0].values[j]).epsilon(1e-12));
  const FilterBank one = make_cf_bank(1, 3);
  REQUIRE(one.size() == 1);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(one.planar[0].at(m, 0) == doctest::Approx(-2.0 / 3).epsilon(1e-14));
    CHECK(std::abs(one.planar[0].at(m, 1)) < 1e-15);
    CHECK(one.planar[0].at(m, 2) == doctest::Approx(2.0 / 3).epsilon(1e-14));
  }
  CHECK_THROWS_AS(make_cf_bank(4, 2), DomainError);
  CHECK_THROWS_AS(make_cf_bank(0, 3), DomainError);

  const auto pts = discretize_circle(16);
  check_planar_oracle(bank, [&](std::size_t i, double x, double y) { return eval_circle(pts[i].theta, x, y); });
}

TEST_CASE("make_kf_bank") {
  const FilterBank bank = make_kf_bank(4, 4, 3);
  CHECK(bank.size() == 16);
  CHECK(bank.kind == BankKind::klein);

  const FilterBank cf = make_cf_bank(1, 3);
  const auto pts = discretize_klein(4, 4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].theta1 == 0.0 && std::abs(pts[i].theta2 - kPi / 2) < 1e-15) {
      for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(bank.planar[i].values[j] - cf.planar[0].values[j]) < 1e-12);
    }
    if (pts[i].theta1 == 0.0 && pts[i].theta2 == 0.0) {
      for (std::size_t m = 0; m < 3; ++m) {
        CHECK(bank.planar[i].at(m, 0) == doctest::Approx(-1.0 / 27).epsilon(1e-12));
        CHECK(bank.planar[i].at(m, 1) == doctest::Approx(-25.0 / 27).epsilon(1e-12));
        CHECK(bank.planar[i].at(m, 2) == doctest::Approx(-1.0 / 27).epsilon(1e-12));
      }
    }
  }
  check_planar_oracle(bank, [&](std::size_t i, double x, double y) { return eval_klein(pts[i], x, y); });

  const auto p = discretize_klein(4, 4)[5];
  const FilterGrid2D a = discretize_patch([&](double x, double y) { return eval_klein(p, x, y); }, 5);
  const FilterGrid2D b = discretize_patch(
      [&](double x, double y) { return eval_klein({p.theta1 + kPi, -p.theta2}, x, y); }, 5);
  for (std::size_t j = 0; j < 25; ++j) CHECK(std::abs(a.values[j] - b.values[j]) < 1e-12);
}

TEST_CASE("KF row at theta2 = pi/2 equals CF") {
  const std::size_t n1 = 8;
  const FilterBank kf = make_kf_bank(n1, 4, 5);
  const FilterBank cf = make_cf_bank(2 * n1, 5);
  // theta2 = pi/2 is row l = 1 of the theta2-major grid; theta1 = k pi / n1 = 2 pi k / (2 n1).
  for (std::size_t k = 0; k < n1; ++k)
    for (std::size_t j = 0; j < 25; ++j)
      CHECK(std::abs(kf.planar[n1 + k].values[j] - cf.planar[k].values[j]) < 1e-12);
}

TEST_CASE("make_mf_bank") {
  const Submanifold stat[] = {Submanifold::klein_static};
  const FilterBank s = make_mf_bank(stat, 2, 2, 3);
  CHECK(s.size() == 4);
  CHECK(s.dims() == 3);
  for (const auto& g : s.volumetric)
    for (std::size_t p = 1; p < 3; ++p)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t n = 0; n < 3; ++n) CHECK(std::abs(g.at(p, m, n) - g.at(0, m, n)) < 1e-12);

  const FilterBank all = make_mf_bank(kAllSubmanifolds, 4, 4, 3);
  CHECK(all.size() == 80);
  CHECK(all.kind == BankKind::moving_klein);

  const Submanifold pm[] = {Submanifold::trans_plus, Submanifold::trans_minus};
  const FilterBank t = make_mf_bank(pm, 2, 2, 3);
  REQUIRE(t.size() == 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t n = 0; n < 3; ++n)
          CHECK(std::abs(t.volumetric[i].at(p, m, n) - t.volumetric[4 + i].at(2 - p, m, n)) < 1e-12);

  const Submanifold rot[] = {Submanifold::rot_plus};
  const FilterBank r = make_mf_bank(rot, 2, 2, 3);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto q = std::get<TangentKleinPoint>(r.points[i]);
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t n = 0; n < 3; ++n) {
          const double want = oracle::cell_average_3d(
              [&](double x, double y, double tt) { return eval_tangent_klein(q, x, y, tt); }, n, m, p, 3);
          CHECK(oracle::rel_error(r.volumetric[i].at(p, m, n), want) < 1e-6);
        }
  }
  CHECK_THROWS_AS(make_mf_bank(std::span<const Submanifold>{}, 2, 2, 3), DomainError);
}

TEST_CASE("make_gabor_bank") {
  const auto family = reference_gabor_family();
  REQUIRE(family.size() == 16);
  for (const auto& g : family) {
    CHECK(g.lambda == doctest::Approx(kPi));
    REQUIRE(g.sigma.has_value());
    CHECK(*g.sigma == doctest::Approx(kTwoPi));
    CHECK(g.gamma == doctest::Approx(kPi / 8));
  }
  const FilterBank bank = make_gabor_bank(family, 3);
  CHECK(bank.size() == 16);
  check_planar_oracle(bank, [&](std::size_t i, double x, double y) { return eval_gabor(family[i], x, y); });

  GaborParams a;
  a.lambda = 1.7;
  a.omega = 0.4;
  GaborParams b = a;
  b.psi = kPi;
  const GaborParams ab[] = {a, b};
  const FilterBank flip = make_gabor_bank(ab, 5);
  for (std::size_t j = 0; j < 25; ++j) CHECK(flip.planar[1].values[j] == doctest::Approx(-flip.planar[0].values[j]).epsilon(1e-12));

  GaborParams single;
  single.lambda = 2.3;
  single.omega = 1.1;
  single.psi = 0.3;
  single.sigma = 0.9;
  single.gamma = 0.5;
  const FilterBank one = make_gabor_bank(std::span<const GaborParams>(&single, 1), 5);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t n = 0; n < 5; ++n) {
      const double w = 2.0 / 5;
      const double lo[2] = {-1 + w * n, -1 + w * m}, hi[2] = {lo[0] + w, lo[1] + w};
      const double dense =
          oracle::midpoint([&](const double* p) { return eval_gabor(single, p[0], p[1]); }, lo, hi, 2, 200) / (w * w);
      CHECK(oracle::rel_error(one.planar[0].at(m, n), dense) < 1e-4);
    }

  GaborParams bad;
  bad.lambda = 0.0;
  CHECK_THROWS_AS(make_gabor_bank(std::span<const GaborParams>(&bad, 1), 3), DomainError);
}

TEST_CASE("gabor_from_klein") {
  for (double t1 : {0.0, 0.6, 2.0}) {
    const GaborParams g = gabor_from_klein({t1, kPi / 2});
    CHECK(g.lambda == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(g.omega == t1);
    CHECK(g.psi == doctest::Approx(3 * kPi / 2).epsilon(1e-15));
    CHECK_FALSE(g.sigma.has_value());
    const FilterGrid2D got = discretize_patch([&](double x, double y) { return eval_gabor(g, x, y); }, 3);
    const FilterGrid2D want = discretize_patch(
        [&](double x, double y) { return std::sin(kPi / 2 * (x * std::cos(t1) + y * std::sin(t1))); }, 3);
    for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(got.values[j] - want.values[j]) < 1e-12);

    const GaborParams h = gabor_from_klein({t1, 0.0});
    const FilterGrid2D got0 = discretize_patch([&](double x, double y) { return eval_gabor(h, x, y); }, 3);
    const FilterGrid2D want0 = discretize_patch(
        [&](double x, double y) { return -std::cos(kPi * (x * std::cos(t1) + y * std::sin(t1))); }, 3);
    for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(got0.values[j] - want0.values[j]) < 1e-12);
  }
  const GaborParams g = gabor_from_klein({0.0, 0.0});
  const double gabor_center = cell_average_2d([&](double x, double y) { return eval_gabor(g, x, y); }, 1, 1, 3);
  CHECK(gabor_center < 0.0);
  CHECK(make_kf_bank(1, 1, 3).planar[0].at(1, 1) < 0.0);
}

TEST_CASE("bank dumps") {
  const auto dir = scratch_dir("bank_dump") / "nested";
  const FilterBank kf = make_kf_bank(4, 4, 3);
  const auto files = dump_bank(kf, dir, "KF");
  CHECK(files.size() == 17);
  for (const auto& f : files) CHECK(std::filesystem::exists(f));

  std::ifstream csv(dir / "KF.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("index,theta1,theta2,r,u,v,w,", 0) == 0);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 16);

  std::ifstream pgm(dir / "KF_000.pgm", std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  pgm >> magic >> w >> h >> maxval;
  pgm.get();
  CHECK(magic == "P5");
  CHECK(w == 3);
  CHECK(h == 3);
  CHECK(maxval == 255);
  std::string pixels((std::istreambuf_iterator<char>(pgm)), std::istreambuf_iterator<char>());
  CHECK(pixels.size() == 9);

  const FilterBank cf = make_cf_bank(16, 3);
  CHECK(dump_bank(cf, dir, "CF").size() == 17);

  const Submanifold tags[] = {Submanifold::trans_plus};
  const FilterBank mf = make_mf_bank(tags, 1, 1, 3);
  dump_bank(mf, dir, "MF");
  std::ifstream vid(dir / "MF_000.pgm", std::ios::binary);
  vid >> magic >> w >> h;
  CHECK(w == 9);
  CHECK(h == 3);
}

}
