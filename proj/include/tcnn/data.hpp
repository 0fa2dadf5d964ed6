#pragma once

// Datasets: MNIST-style IDX files, class-correlated noise, resampling, splits
// and synthetic moving-patch videos.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcnn/geometry.hpp"
#include "tcnn/tensor.hpp"

namespace tcnn {

/// Grayscale images [n, 1, H, W] with integer labels in [0, classes).
struct ImageDataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return images.extent(2); }
  std::size_t width() const { return images.extent(3); }
};

/// Videos [n, 1, T, H, W]; labels index `tags`. Values lie in [-amplitude, amplitude].
struct VideoDataset {
  Tensor<float> videos;
  std::vector<int> labels;
  std::vector<Submanifold> tags;
  double amplitude = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t classes() const noexcept { return tags.size(); }
};

// --- IDX ----------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
/// float32 image variant, used to store unclamped noisy images losslessly.
inline constexpr std::uint32_t kIdxFloatImageMagic = 0x00000D03;

/// Parses a big-endian IDX image/label pair. Unsigned-byte pixels are scaled
/// by 1/255. Throws DataError with kind io, bad_magic, truncated or
/// count_mismatch; the message names the file.
ImageDataset load_idx(const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path);

enum class IdxPixels { ubyte, float32 };

/// Writes the pair back. ubyte pixels are round(255 * clamp(v, 0, 1)).
void write_idx(const ImageDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, IdxPixels pixels = IdxPixels::ubyte);

/// The 70,000 MNIST images (train followed by t10k) from `dir`.
ImageDataset load_mnist(const std::filesystem::path& dir);

// --- noise --------------------------------------------------------------------------

/// Per class k: mu_k ~ N(tau, mu_var), sigma_k^2 ~ chi2(1) * omega_sq.
struct NoiseSpec {
  double tau = 0.2;
  double mu_var = 0.04;
  double omega_sq = 0.04;
  std::uint64_t seed = 0;
  bool clamp = false;
};

struct ClassNoise {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// The (mu_k, sigma_k^2) drawn for `classes` classes; the same draws add_class_noise uses.
ClassNoise draw_class_noise(const NoiseSpec& spec, std::size_t classes);

/// z = x + E with E i.i.d. per pixel ~ N(mu_k, sigma_k^2) for an image of class k.
/// Unclamped unless spec.clamp. Throws DomainError for negative variances.
ImageDataset add_class_noise(const ImageDataset& ds, const NoiseSpec& spec);

struct SweepEntry {
  std::string family;  ///< "tau" or "omega"
  double value = 0.0;
  NoiseSpec spec;
};

/// tau family: (tau, .04, .04); omega family: (.2, omega^2, omega^2).
/// Throws DomainError when both lists are empty.
std::vector<SweepEntry> sweep_specs(std::span<const double> taus, std::span<const double> omegas,
                                    std::uint64_t seed = 0);

// --- transforms ---------------------------------------------------------------------

/// Corner-aligned bilinear resampling to height x width.
ImageDataset resize_bilinear(const ImageDataset& ds, std::size_t height, std::size_t width);

/// Samples `indices` in the given order.
ImageDataset subset(const ImageDataset& ds, std::span<const std::size_t> indices);
VideoDataset subset(const VideoDataset& ds, std::span<const std::size_t> indices);

ImageDataset concat(const ImageDataset& a, const ImageDataset& b);

/// Seeded permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Seeded shuffle, then the first round(fraction * n) samples train and the
/// rest test. Throws DomainError unless both parts are non-empty.
std::pair<ImageDataset, ImageDataset> split(const ImageDataset& ds, double train_fraction,
                                            std::uint64_t seed);
std::pair<VideoDataset, VideoDataset> split(const VideoDataset& ds, double train_fraction,
                                            std::uint64_t seed);

// --- synthetic video ----------------------------------------------------------------

/// per_class videos per tag, class-major. Each rasterizes eval_tangent_klein at
/// grid points -1 + 2i/(N-1) (0 for N = 1) over a uniformly random
/// (theta1, theta2) in [0, pi) x [0, 2pi), with r = 0.
VideoDataset make_synthetic_videos(std::span<const Submanifold> tags, std::size_t per_class,
                                   std::size_t frames, std::size_t height, std::size_t width,
                                   std::uint64_t seed);

/// Writes `<stem>.tcnn` (records "videos" and "labels") and `<stem>.json`.
void save_videos(const VideoDataset& ds, const std::filesystem::path& stem);
VideoDataset load_videos(const std::filesystem::path& stem);

} // namespace tcnn
