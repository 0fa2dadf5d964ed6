#include "tcnn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <json.hpp>

#include "tcnn/checkpoint.hpp"

namespace tcnn {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path.string() + "'");
}

std::uint32_t be32(const std::string& b, std::size_t at) {
  return (std::uint32_t(std::uint8_t(b[at])) << 24) | (std::uint32_t(std::uint8_t(b[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(b[at + 2])) << 8) | std::uint32_t(std::uint8_t(b[at + 3]));
}

void put_be32(std::string& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<char>((v >> shift) & 0xFF));
}

void need(const std::string& bytes, std::size_t n, const std::filesystem::path& path) {
  if (bytes.size() < n)
    throw DataError(DataError::Kind::truncated, "'" + path.string() + "' is truncated: expected " +
                                                    std::to_string(n) + " bytes, found " +
                                                    std::to_string(bytes.size()));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

} // namespace

ImageDataset load_idx(const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  const std::string img = read_file(images_path);
  const std::string lab = read_file(labels_path);

  need(img, 4, images_path);
  const std::uint32_t img_magic = be32(img, 0);
  if (img_magic != kIdxImageMagic && img_magic != kIdxFloatImageMagic)
    throw DataError(DataError::Kind::bad_magic, "'" + images_path.string() + "' has magic " +
                                                    hex(img_magic) + ", expected " + hex(kIdxImageMagic));
  need(lab, 4, labels_path);
  const std::uint32_t lab_magic = be32(lab, 0);
  if (lab_magic != kIdxLabelMagic)
    throw DataError(DataError::Kind::bad_magic, "'" + labels_path.string() + "' has magic " +
                                                    hex(lab_magic) + ", expected " + hex(kIdxLabelMagic));

  need(img, 16, images_path);
  const std::size_t n = be32(img, 4), h = be32(img, 8), w = be32(img, 12);
  need(lab, 8, labels_path);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels)
    throw DataError(DataError::Kind::count_mismatch,
                    "'" + images_path.string() + "' holds " + std::to_string(n) + " images but '" +
                        labels_path.string() + "' holds " + std::to_string(n_labels) + " labels");
  const bool floats = img_magic == kIdxFloatImageMagic;
  const std::size_t pixel_bytes = floats ? 4 : 1;
  need(img, 16 + n * h * w * pixel_bytes, images_path);
  need(lab, 8 + n, labels_path);

  ImageDataset ds;
  ds.name = images_path.stem().string();
  ds.images = Tensor<float>(Shape{n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) {
    if (floats) {
      const std::uint32_t bits = be32(img, 16 + 4 * i);
      ds.images[i] = std::bit_cast<float>(bits);
    } else {
      ds.images[i] = static_cast<float>(std::uint8_t(img[16 + i])) / 255.0f;
    }
  }
  ds.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = std::uint8_t(lab[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = static_cast<std::size_t>(max_label + 1);
  return ds;
}

void write_idx(const ImageDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, IdxPixels pixels) {
  const std::size_t n = ds.size(), h = ds.height(), w = ds.width();
  std::string img;
  put_be32(img, pixels == IdxPixels::float32 ? kIdxFloatImageMagic : kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(n));
  put_be32(img, static_cast<std::uint32_t>(h));
  put_be32(img, static_cast<std::uint32_t>(w));
  for (std::size_t i = 0; i < n * h * w; ++i) {
    const float v = ds.images[i];
    if (pixels == IdxPixels::float32) {
      put_be32(img, std::bit_cast<std::uint32_t>(v));
    } else {
      const float c = std::clamp(v, 0.0f, 1.0f);
      img.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(c * 255.0f))));
    }
  }
  std::string lab;
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(n));
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw DomainError("IDX labels must fit in one byte");
    lab.push_back(static_cast<char>(l));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

ImageDataset load_mnist(const std::filesystem::path& dir) {
  ImageDataset train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  ImageDataset test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  ImageDataset all = concat(train, test);
  all.name = "mnist";
  return all;
}

// --- noise --------------------------------------------------------------------------

ClassNoise draw_class_noise(const NoiseSpec& spec, std::size_t classes) {
  if (!(spec.mu_var >= 0.0) || !(spec.omega_sq >= 0.0))
    throw DomainError("noise variances must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassNoise noise;
  for (std::size_t k = 0; k < classes; ++k) {
    const double z_mean = normal(rng);
    const double z_var = normal(rng);
    noise.mean.push_back(spec.tau + std::sqrt(spec.mu_var) * z_mean);
    noise.variance.push_back(z_var * z_var * spec.omega_sq);
  }
  return noise;
}

ImageDataset add_class_noise(const ImageDataset& ds, const NoiseSpec& spec) {
  const ClassNoise noise = draw_class_noise(spec, ds.classes);
  std::mt19937_64 rng(spec.seed ^ 0x9E3779B97F4A7C15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageDataset out = ds;
  const std::size_t plane = ds.size() ? ds.images.size() / ds.size() : 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(ds.labels[i]);
    const double mu = noise.mean.at(k);
    const double sd = std::sqrt(noise.variance.at(k));
    float* px = out.images.data() + i * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      float v = static_cast<float>(px[p] + (mu + sd * normal(rng)));
      if (spec.clamp) v = std::clamp(v, 0.0f, 1.0f);
      px[p] = v;
    }
  }
  out.name = ds.name + "+noise";
  return out;
}

std::vector<SweepEntry> sweep_specs(std::span<const double> taus, std::span<const double> omegas,
                                    std::uint64_t seed) {
  if (taus.empty() && omegas.empty()) throw DomainError("sweep needs at least one tau or omega");
  std::vector<SweepEntry> out;
  for (double tau : taus) out.push_back({"tau", tau, NoiseSpec{tau, 0.04, 0.04, seed, false}});
  for (double omega : omegas)
    out.push_back({"omega", omega, NoiseSpec{0.2, omega * omega, omega * omega, seed, false}});
  return out;
}

// --- transforms ---------------------------------------------------------------------

ImageDataset resize_bilinear(const ImageDataset& ds, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DomainError("resize target must be at least 1x1");
  const std::size_t n = ds.size(), h = ds.height(), w = ds.width();
  if (h == height && w == width) return ds;
  auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
    if (out == 1) return 0.5 * static_cast<double>(in - 1);
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  ImageDataset out;
  out.name = ds.name;
  out.labels = ds.labels;
  out.classes = ds.classes;
  out.images = Tensor<float>(Shape{n, 1, height, width});
  for (std::size_t s = 0; s < n; ++s) {
    const float* src = ds.images.data() + s * h * w;
    float* dst = out.images.data() + s * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const double sy = coord(y, h, height);
      const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double sx = coord(x, w, width);
        const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double top = (1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
        const double bot = (1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
        dst[y * width + x] = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

namespace {

Tensor<float> gather(const Tensor<float>& data, std::size_t n, std::span<const std::size_t> indices) {
  Shape shape = data.shape();
  shape[0] = indices.size();
  Tensor<float> out(shape);
  const std::size_t plane = n ? data.size() / n : 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) throw DomainError("sample index out of range");
    std::copy_n(data.data() + indices[i] * plane, plane, out.data() + i * plane);
  }
  return out;
}

std::size_t train_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("train fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n)
    throw DomainError("split of " + std::to_string(n) + " samples at " + std::to_string(fraction) +
                      " leaves an empty part");
  return n_train;
}

template <typename Dataset>
std::pair<Dataset, Dataset> split_impl(const Dataset& ds, double fraction, std::uint64_t seed) {
  const std::size_t n_train = train_count(ds.size(), fraction);
  const std::vector<std::size_t> order = shuffled_indices(ds.size(), seed);
  const std::span<const std::size_t> all(order);
  return {subset(ds, all.first(n_train)), subset(ds, all.subspan(n_train))};
}

} // namespace

ImageDataset subset(const ImageDataset& ds, std::span<const std::size_t> indices) {
  ImageDataset out;
  out.name = ds.name;
  out.classes = ds.classes;
  out.images = gather(ds.images, ds.size(), indices);
  for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  return out;
}

VideoDataset subset(const VideoDataset& ds, std::span<const std::size_t> indices) {
  VideoDataset out;
  out.tags = ds.tags;
  out.amplitude = ds.amplitude;
  out.seed = ds.seed;
  out.videos = gather(ds.videos, ds.size(), indices);
  for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  return out;
}

ImageDataset concat(const ImageDataset& a, const ImageDataset& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError("cannot concatenate " + shape_string(a.images.shape()) + " and " +
                     shape_string(b.images.shape()));
  ImageDataset out;
  out.name = a.name;
  out.classes = std::max(a.classes, b.classes);
  std::vector<float> values(a.images.values().begin(), a.images.values().end());
  values.insert(values.end(), b.images.values().begin(), b.images.values().end());
  out.images = Tensor<float>(Shape{a.size() + b.size(), 1, a.height(), a.width()}, std::move(values));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::pair<ImageDataset, ImageDataset> split(const ImageDataset& ds, double train_fraction,
                                            std::uint64_t seed) {
  return split_impl(ds, train_fraction, seed);
}

std::pair<VideoDataset, VideoDataset> split(const VideoDataset& ds, double train_fraction,
                                            std::uint64_t seed) {
  return split_impl(ds, train_fraction, seed);
}

// --- synthetic video ----------------------------------------------------------------

VideoDataset make_synthetic_videos(std::span<const Submanifold> tags, std::size_t per_class,
                                   std::size_t frames, std::size_t height, std::size_t width,
                                   std::uint64_t seed) {
  if (tags.empty()) throw DomainError("video dataset needs at least one class");
  if (per_class == 0) throw DomainError("per_class must be >= 1");
  if (frames == 0 || height == 0 || width == 0) throw DomainError("video grid must be non-empty");
  auto grid = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  VideoDataset ds;
  ds.tags.assign(tags.begin(), tags.end());
  ds.seed = seed;
  const std::size_t n = tags.size() * per_class;
  const std::size_t plane = frames * height * width;
  ds.videos = Tensor<float>(Shape{n, 1, frames, height, width});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle1(0.0, kPi), angle2(0.0, kTwoPi);
  double amplitude = 0.0;
  std::size_t s = 0;
  for (std::size_t c = 0; c < tags.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++s) {
      const double t1 = angle1(rng);
      const double t2 = angle2(rng);
      const TangentKleinPoint q = submanifold_point(tags[c], {t1, t2});
      float* dst = ds.videos.data() + s * plane;
      for (std::size_t p = 0; p < frames; ++p)
        for (std::size_t m = 0; m < height; ++m)
          for (std::size_t x = 0; x < width; ++x) {
            const double v = eval_tangent_klein(q, grid(x, width), grid(m, height), grid(p, frames));
            amplitude = std::max(amplitude, std::abs(v));
            dst[(p * height + m) * width + x] = static_cast<float>(v);
          }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  ds.amplitude = amplitude;
  return ds;
}

void save_videos(const VideoDataset& ds, const std::filesystem::path& stem) {
  Tensor<float> labels(Shape{ds.size()});
  for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = static_cast<float>(ds.labels[i]);
  std::filesystem::path bin = stem, manifest = stem;
  bin += ".tcnn";
  manifest += ".json";
  write_tensor_records({{"videos", ds.videos}, {"labels", labels}}, bin);

  nlohmann::json doc;
  doc["classes"] = nlohmann::json::array();
  for (Submanifold t : ds.tags) doc["classes"].push_back(std::string(to_string(t)));
  doc["seed"] = ds.seed;
  doc["samples"] = ds.size();
  doc["grid"] = {{"frames", ds.videos.extent(2)},
                 {"height", ds.videos.extent(3)},
                 {"width", ds.videos.extent(4)}};
  doc["amplitude"] = ds.amplitude;
  doc["data"] = bin.filename().string();
  write_file(manifest, doc.dump(2) + "\n");
}

VideoDataset load_videos(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, manifest = stem;
  bin += ".tcnn";
  manifest += ".json";
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::format, "'" + manifest.string() + "': " + e.what());
  }
  VideoDataset ds;
  try {
    for (const auto& c : doc.at("classes")) ds.tags.push_back(parse_submanifold(c.get<std::string>()));
    ds.seed = doc.at("seed").get<std::uint64_t>();
    ds.amplitude = doc.at("amplitude").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::format, "'" + manifest.string() + "': " + e.what());
  }
  std::vector<NamedTensor> records = read_tensor_records(bin);
  if (records.size() != 2 || records[0].name != "videos" || records[1].name != "labels")
    throw DataError(DataError::Kind::format, "'" + bin.string() + "' is not a video container");
  ds.videos = std::move(records[0].tensor);
  if (ds.videos.rank() != 5 || records[1].tensor.size() != ds.videos.extent(0))
    throw DataError(DataError::Kind::count_mismatch,
                    "'" + bin.string() + "' has mismatched video and label counts");
  for (float l : records[1].tensor.values()) {
    const int label = static_cast<int>(l);
    if (label < 0 || static_cast<std::size_t>(label) >= ds.tags.size())
      throw DataError(DataError::Kind::format, "'" + bin.string() + "' has an out-of-range label");
    ds.labels.push_back(label);
  }
  return ds;
}

} // namespace tcnn
