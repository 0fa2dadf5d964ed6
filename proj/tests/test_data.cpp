#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "tcnn/checkpoint.hpp"
#include "tcnn/data.hpp"

using namespace tcnn;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tcnn_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ImageDataset random_images(std::size_t n, std::size_t h, std::size_t w, std::size_t classes,
                           std::uint64_t seed) {
  ImageDataset ds;
  ds.name = "random";
  ds.classes = classes;
  ds.images = Tensor<float>(Shape{n, 1, h, w});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  for (float& v : ds.images.values()) v = static_cast<float>(byte(rng)) / 255.0f;
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % classes));
  return ds;
}

std::optional<std::filesystem::path> mnist_dir() {
  const char* candidates[] = {std::getenv("TCNN_DATA_DIR"), TCNN_DEFAULT_DATA_DIR};
  for (const char* c : candidates) {
    if (c && std::filesystem::exists(std::filesystem::path(c) / "train-images-idx3-ubyte")) return c;
  }
  return std::nullopt;
}

DataError::Kind load_error(const std::filesystem::path& img, const std::filesystem::path& lab) {
  try {
    load_idx(img, lab);
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("expected a DataError");
  return DataError::Kind::io;
}

double grid(std::size_t i, std::size_t n) { return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1); }

} // namespace

TEST_SUITE("data-io") {

TEST_CASE("IDX round trip") {
  const ImageDataset ds = random_images(7, 3, 5, 4, 1);
  const auto img = scratch("rt-images"), lab = scratch("rt-labels");
  write_idx(ds, img, lab);
  const ImageDataset back = load_idx(img, lab);
  CHECK(back.images == ds.images);
  CHECK(back.labels == ds.labels);
  CHECK(back.classes == 4);
  CHECK(back.height() == 3);
  CHECK(back.width() == 5);

  ImageDataset noisy = ds;
  noisy.images[0] = -0.37f;
  noisy.images[1] = 1.9f;
  write_idx(noisy, img, lab, IdxPixels::float32);
  CHECK(load_idx(img, lab).images == noisy.images);
}

TEST_CASE("IDX errors are distinct") {
  const ImageDataset ds = random_images(4, 2, 2, 2, 2);
  const auto img = scratch("err-images"), lab = scratch("err-labels");
  write_idx(ds, img, lab);

  const auto bad = scratch("bad-images");
  std::filesystem::copy_file(img, bad, std::filesystem::copy_options::overwrite_existing);
  {
    std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('\x07');
  }
  CHECK(load_error(bad, lab) == DataError::Kind::bad_magic);
  try {
    load_idx(bad, lab);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bad-images") != std::string::npos);
  }

  const auto cut = scratch("cut-images");
  std::filesystem::copy_file(img, cut, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(cut, std::filesystem::file_size(img) - 1);
  CHECK(load_error(cut, lab) == DataError::Kind::truncated);

  const auto lab3 = scratch("lab3"), img3 = scratch("img3");
  write_idx(random_images(3, 2, 2, 2, 3), img3, lab3);
  CHECK(load_error(img, lab3) == DataError::Kind::count_mismatch);

  CHECK(load_error(scratch("missing"), lab) == DataError::Kind::io);
}

TEST_CASE("MNIST files") {
  const auto dir = mnist_dir();
  if (!dir) {
    MESSAGE("MNIST not found; skipping");
    return;
  }
  const ImageDataset train = load_idx(*dir / "train-images-idx3-ubyte", *dir / "train-labels-idx1-ubyte");
  CHECK(train.size() == 60000);
  CHECK(train.height() == 28);
  CHECK(train.width() == 28);
  CHECK(train.classes == 10);
  const ImageDataset test = load_idx(*dir / "t10k-images-idx3-ubyte", *dir / "t10k-labels-idx1-ubyte");
  CHECK(test.size() == 10000);
  float lo = 1.0f, hi = 0.0f;
  for (float v : test.images.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);
  const ImageDataset all = concat(train, test);
  const auto [a, b] = split(all, 0.85, 1);
  CHECK(a.size() == 59500);
  CHECK(b.size() == 10500);
}

TEST_CASE("class noise") {
  const ImageDataset ds = random_images(1000, 6, 6, 10, 4);
  const NoiseSpec zero{0.0, 0.0, 0.0, 9, false};
  CHECK(add_class_noise(ds, zero).images == ds.images);

  const NoiseSpec spec{0.2, 0.04, 0.04, 5, false};
  const ImageDataset a = add_class_noise(ds, spec);
  const ImageDataset b = add_class_noise(ds, spec);
  CHECK(a.images == b.images);
  NoiseSpec other = spec;
  other.seed = 6;
  CHECK_FALSE(add_class_noise(ds, other).images == a.images);

  const ClassNoise drawn = draw_class_noise(spec, 10);
  const std::size_t plane = 36;
  bool below = false, above = false;
  for (std::size_t k = 0; k < 10; ++k) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (static_cast<std::size_t>(ds.labels[i]) != k) continue;
      for (std::size_t p = 0; p < plane; ++p) {
        sum += static_cast<double>(a.images[i * plane + p]) - ds.images[i * plane + p];
        ++count;
      }
      for (std::size_t p = 0; p < plane; ++p) {
        below = below || a.images[i * plane + p] < 0.0f;
        above = above || a.images[i * plane + p] > 1.0f;
      }
    }
    const double se = std::sqrt(drawn.variance[k] / static_cast<double>(count));
    CHECK(std::abs(sum / static_cast<double>(count) - drawn.mean[k]) <= 3.0 * se + 1e-6);
  }
  CHECK((below || above));

  NoiseSpec clamped = spec;
  clamped.clamp = true;
  const ImageDataset noisy = add_class_noise(ds, clamped);
  for (float v : noisy.images.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  const NoiseSpec flat{0.2, 0.0, 0.0, 3, false};
  const ClassNoise fixed = draw_class_noise(flat, 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(fixed.mean[k] == 0.2);
    CHECK(fixed.variance[k] == 0.0);
  }
  CHECK_THROWS_AS(draw_class_noise({0.2, -1.0, 0.0, 0, false}, 2), DomainError);
}

TEST_CASE("sweep_specs") {
  const double taus[] = {0.0, 0.2, 0.4, 0.6, 0.8};
  const auto t = sweep_specs(taus, {});
  REQUIRE(t.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(t[i].family == "tau");
    CHECK(t[i].spec.tau == taus[i]);
    CHECK(t[i].spec.mu_var == 0.04);
    CHECK(t[i].spec.omega_sq == 0.04);
  }
  const double zero[] = {0.0};
  const auto single = sweep_specs(zero, {});
  REQUIRE(single.size() == 1);
  CHECK(single[0].spec.tau == 0.0);
  const auto om = sweep_specs({}, zero);
  REQUIRE(om.size() == 1);
  CHECK(om[0].family == "omega");
  CHECK(om[0].spec.tau == 0.2);
  const ClassNoise n = draw_class_noise(om[0].spec, 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(n.mean[k] == 0.2);
    CHECK(n.variance[k] == 0.0);
  }
  const double omegas[] = {0.4};
  CHECK(sweep_specs({}, omegas)[0].spec.mu_var == doctest::Approx(0.16));
  CHECK_THROWS_AS(sweep_specs({}, {}), DomainError);
}

TEST_CASE("resize_bilinear") {
  const ImageDataset ds = random_images(3, 5, 4, 2, 7);
  CHECK(resize_bilinear(ds, 5, 4).images == ds.images);

  ImageDataset c;
  c.classes = 1;
  c.labels = {0};
  c.images = Tensor<float>(Shape{1, 1, 2, 2}, 0.4f);
  const ImageDataset big = resize_bilinear(c, 4, 4);
  for (float v : big.images.values()) CHECK(v == doctest::Approx(0.4f));

  ImageDataset ramp;
  ramp.classes = 1;
  ramp.labels = {0};
  ramp.images = Tensor<float>(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp.images[i] = static_cast<float>(i) / 15.0f;
  const ImageDataset small = resize_bilinear(ramp, 2, 2);
  CHECK(small.images[0] == doctest::Approx(0.0f));
  CHECK(small.images[1] == doctest::Approx(3.0f / 15));
  CHECK(small.images[2] == doctest::Approx(12.0f / 15));
  CHECK(small.images[3] == doctest::Approx(1.0f));
  const ImageDataset three = resize_bilinear(ramp, 3, 3);
  CHECK(three.images[4] == doctest::Approx(7.5f / 15));
  CHECK(three.images[1] == doctest::Approx(1.5f / 15));
  const ImageDataset up = resize_bilinear(ds, 9, 7);
  for (float v : up.images.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS(resize_bilinear(ds, 0, 3), DomainError);
}

TEST_CASE("split") {
  const ImageDataset ds = random_images(40, 2, 2, 5, 8);
  for (double f : {0.1, 0.5, 0.85, 0.97}) {
    for (std::uint64_t seed : {1u, 2u, 99u}) {
      const auto [a, b] = split(ds, f, seed);
      CHECK(a.size() == static_cast<std::size_t>(std::llround(f * 40)));
      CHECK(a.size() + b.size() == 40);
      std::multiset<float> seen;
      for (float v : a.images.values()) seen.insert(v);
      for (float v : b.images.values()) seen.insert(v);
      CHECK(seen == std::multiset<float>(ds.images.values().begin(), ds.images.values().end()));
      const auto [a2, b2] = split(ds, f, seed);
      CHECK(a2.images == a.images);
      CHECK(b2.labels == b.labels);
    }
  }
  const auto order = shuffled_indices(40, 3);
  CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == 40);
  CHECK_THROWS_AS(split(ds, 0.99, 1), DomainError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), DomainError);
  CHECK_THROWS_AS(split(ds, 0.0, 1), DomainError);
}

TEST_CASE("synthetic videos") {
  const auto all = make_synthetic_videos(kAllSubmanifolds, 200, 9, 9, 9, 1);
  CHECK(all.size() == 1000);
  CHECK(all.videos.shape() == Shape{1000, 1, 9, 9, 9});
  for (int c = 0; c < 5; ++c) CHECK(std::count(all.labels.begin(), all.labels.end(), c) == 200);
  float peak = 0.0f;
  for (float v : all.videos.values()) peak = std::max(peak, std::abs(v));
  CHECK(peak <= all.amplitude + 1e-6);

  const std::size_t plane = 81, vol = 729;
  for (std::size_t s = 0; s < 200; ++s)
    for (std::size_t p = 1; p < 9; ++p)
      for (std::size_t j = 0; j < plane; ++j)
        REQUIRE(all.videos[s * vol + p * plane + j] == all.videos[s * vol + j]);

  const Submanifold plus[] = {Submanifold::trans_plus};
  const Submanifold minus[] = {Submanifold::trans_minus};
  const auto a = make_synthetic_videos(plus, 20, 7, 5, 5, 4);
  const auto b = make_synthetic_videos(minus, 20, 7, 5, 5, 4);
  const std::size_t pl = 25, vl = 175;
  for (std::size_t s = 0; s < 20; ++s)
    for (std::size_t p = 0; p < 7; ++p)
      for (std::size_t j = 0; j < pl; ++j)
        CHECK(std::abs(a.videos[s * vl + p * pl + j] - b.videos[s * vl + (6 - p) * pl + j]) < 1e-6);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> angle1(0.0, kPi), angle2(0.0, kTwoPi);
  const double t1 = angle1(rng), t2 = angle2(rng);
  for (std::size_t p = 0; p < 7; ++p)
    for (std::size_t m = 0; m < 5; ++m)
      for (std::size_t x = 0; x < 5; ++x) {
        const double want = eval_trans_klein({t1, t2, grid(p, 7)}, grid(x, 5), grid(m, 5));
        CHECK(a.videos[p * pl + m * 5 + x] == doctest::Approx(want).epsilon(1e-6));
      }

  const auto [tr, te] = split(all, 0.8, 2);
  CHECK(tr.size() == 800);
  CHECK(te.size() == 200);
  CHECK_THROWS_AS(make_synthetic_videos(plus, 0, 3, 3, 3, 1), DomainError);
}

TEST_CASE("video container round trip") {
  const Submanifold tags[] = {Submanifold::klein_static, Submanifold::rot_plus};
  const auto ds = make_synthetic_videos(tags, 3, 3, 4, 4, 11);
  const auto stem = scratch("videos");
  save_videos(ds, stem);
  auto json = stem;
  json += ".json";
  CHECK(std::filesystem::exists(json));
  const VideoDataset back = load_videos(stem);
  CHECK(back.videos == ds.videos);
  CHECK(back.labels == ds.labels);
  CHECK(back.tags == ds.tags);
  CHECK(back.seed == 11);
  CHECK(back.amplitude == ds.amplitude);
  auto bin = stem;
  bin += ".tcnn";
  const auto recs = read_tensor_records(bin);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].name == "videos");
}

}
