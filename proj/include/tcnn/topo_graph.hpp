#pragma once

// Slice-to-slice correspondences: which input slices feed which output slices
// of a convolution, decided by thresholding a manifold distance between the
// points labelling the slices (COL, KOL, 6MKOL connectivity).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "tcnn/geometry.hpp"
#include "tcnn/layer_spec.hpp"

namespace tcnn {

enum class MetricTag { circle, klein, tangent_klein };

std::string_view to_string(MetricTag tag);
MetricTag parse_metric_tag(std::string_view name);

using SlicePoint = std::variant<CirclePoint, KleinPoint, TangentKleinPoint>;

/// Points of one manifold labelling the slices of a layer.
struct SliceSet {
  MetricTag metric = MetricTag::circle;
  std::vector<SlicePoint> points;
  std::vector<int> labels;

  static SliceSet circle(std::span<const CirclePoint> points);
  static SliceSet klein(std::span<const KleinPoint> points);
  static SliceSet tangent_klein(std::span<const TangentKleinPoint> points);

  std::size_t size() const noexcept { return points.size(); }
};

/// Distance between two slice points under the given metric. Throws
/// DomainError when a point does not belong to that manifold.
double slice_distance(const SlicePoint& a, const SlicePoint& b, MetricTag metric);

/// All-pairs distances d(inputs[i], outputs[j]), stored as values[j*cols + i].
struct DistanceTable {
  MetricTag metric = MetricTag::circle;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  static DistanceTable compute(const SliceSet& inputs, const SliceSet& outputs);

  double at(std::size_t j, std::size_t i) const { return values[j * cols + i]; }
};

/// bits[j*cols + i] is set iff d(inputs[i], outputs[j]) <= threshold.
struct CorrespondenceMask {
  std::size_t rows = 0;  ///< output slices
  std::size_t cols = 0;  ///< input slices
  std::vector<std::uint8_t> bits;
  double threshold = 0.0;
  MetricTag metric = MetricTag::circle;
  SliceSet inputs;
  SliceSet outputs;

  bool at(std::size_t j, std::size_t i) const { return bits[j * cols + i] != 0; }
  std::size_t row_count(std::size_t j) const;
  std::size_t count() const;
};

/// Relative slack on the threshold comparison; absorbs rounding in distances
/// that are equal in exact arithmetic (e.g. symmetric grid spacings).
inline constexpr double kThresholdSlack = 1e-12;

/// Thresholds a precomputed table. Throws ConstructionError naming the first
/// output slice with no inputs, and DomainError for negative thresholds.
CorrespondenceMask build_mask(const DistanceTable& table, const SliceSet& inputs,
                              const SliceSet& outputs, double threshold);

/// Computes the distance table for (inputs, outputs) and thresholds it.
/// `metric` must match both slice sets.
CorrespondenceMask build_mask(const SliceSet& inputs, const SliceSet& outputs, double threshold,
                              MetricTag metric);

/// Fraction of set bits.
double mask_density(const CorrespondenceMask& mask);

/// Convolution layer (2D, or 3D for tangent-Klein masks) whose slice pairs are
/// restricted by `mask` and whose spatial window is kernel_size^N.
LayerSpec compose_layer_spec(std::shared_ptr<const CorrespondenceMask> mask,
                             std::size_t kernel_size);

/// 0/1 CSV with a header row of input slice indices and a leading column of
/// output slice indices.
void write_mask_csv(const CorrespondenceMask& mask, const std::filesystem::path& path);

/// JSON sidecar: metric, threshold, shape, and the coordinates of both slice sets.
void write_mask_json(const CorrespondenceMask& mask, const std::filesystem::path& path);

} // namespace tcnn
