#include "tcnn/topo_graph.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tcnn/error.hpp"

namespace tcnn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::conv2d: return "conv2d";
  case LayerKind::conv3d: return "conv3d";
  case LayerKind::fixed_filter_2d: return "fixed-filter-2d";
  case LayerKind::fixed_filter_3d: return "fixed-filter-3d";
  case LayerKind::relu: return "relu";
  case LayerKind::maxpool2d: return "maxpool2d";
  case LayerKind::maxpool3d: return "maxpool3d";
  case LayerKind::flatten: return "flatten";
  case LayerKind::fully_connected: return "fully-connected";
  case LayerKind::softmax_xent: return "softmax-xent";
  }
  return "?";
}

std::string_view to_string(MetricTag tag) {
  switch (tag) {
  case MetricTag::circle: return "circle";
  case MetricTag::klein: return "klein";
  case MetricTag::tangent_klein: return "tangent-klein";
  }
  return "?";
}

MetricTag parse_metric_tag(std::string_view name) {
  for (MetricTag t : {MetricTag::circle, MetricTag::klein, MetricTag::tangent_klein})
    if (to_string(t) == name) return t;
  throw DomainError("unknown metric tag '" + std::string(name) + "'");
}

namespace {

template <typename Point, typename Same>
SliceSet make_slice_set(MetricTag metric, std::span<const Point> points, Same&& same) {
  if (points.empty()) throw DomainError("slice set must be non-empty");
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      if (same(points[i], points[j]))
        throw DomainError("slice points " + std::to_string(i) + " and " + std::to_string(j) +
                          " are the same manifold point");
  SliceSet set;
  set.metric = metric;
  set.points.assign(points.begin(), points.end());
  set.labels.resize(points.size());
  std::iota(set.labels.begin(), set.labels.end(), 0);
  return set;
}

bool same_tangent(const TangentKleinPoint& a, const TangentKleinPoint& b) {
  const TangentKleinPoint ca = canonicalize(a);
  const TangentKleinPoint cb = canonicalize(b);
  auto close = [](double x, double y) { return std::abs(x - y) <= kAngleTolerance; };
  return klein_equivalent({ca.base.theta1, ca.base.theta2}, {cb.base.theta1, cb.base.theta2}) &&
         close(ca.base.r, cb.base.r) && close(ca.u, cb.u) && close(ca.v, cb.v) &&
         close(ca.w, cb.w);
}

template <typename Point>
const Point& expect(const SlicePoint& p, MetricTag metric) {
  if (const Point* q = std::get_if<Point>(&p)) return *q;
  throw DomainError("slice point does not lie on the " + std::string(to_string(metric)) +
                    " manifold");
}

} // namespace

SliceSet SliceSet::circle(std::span<const CirclePoint> points) {
  return make_slice_set(MetricTag::circle, points, [](const CirclePoint& a, const CirclePoint& b) {
    return dist_circle(a, b) <= kAngleTolerance;
  });
}

SliceSet SliceSet::klein(std::span<const KleinPoint> points) {
  return make_slice_set(MetricTag::klein, points, [](const KleinPoint& a, const KleinPoint& b) {
    return klein_equivalent(a, b);
  });
}

SliceSet SliceSet::tangent_klein(std::span<const TangentKleinPoint> points) {
  return make_slice_set(MetricTag::tangent_klein, points, same_tangent);
}

double slice_distance(const SlicePoint& a, const SlicePoint& b, MetricTag metric) {
  switch (metric) {
  case MetricTag::circle:
    return dist_circle(expect<CirclePoint>(a, metric), expect<CirclePoint>(b, metric));
  case MetricTag::klein:
    return dist_klein(expect<KleinPoint>(a, metric), expect<KleinPoint>(b, metric));
  case MetricTag::tangent_klein:
    return dist_tangent_klein(expect<TangentKleinPoint>(a, metric),
                              expect<TangentKleinPoint>(b, metric));
  }
  throw DomainError("unknown metric");
}

DistanceTable DistanceTable::compute(const SliceSet& inputs, const SliceSet& outputs) {
  if (inputs.metric != outputs.metric)
    throw DomainError("input and output slice sets live on different manifolds");
  DistanceTable table;
  table.metric = inputs.metric;
  table.rows = outputs.size();
  table.cols = inputs.size();
  table.values.resize(table.rows * table.cols);
  for (std::size_t j = 0; j < table.rows; ++j)
    for (std::size_t i = 0; i < table.cols; ++i)
      table.values[j * table.cols + i] =
          slice_distance(inputs.points[i], outputs.points[j], table.metric);
  return table;
}

std::size_t CorrespondenceMask::row_count(std::size_t j) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < cols; ++i) c += bits[j * cols + i];
  return c;
}

std::size_t CorrespondenceMask::count() const {
  return static_cast<std::size_t>(std::accumulate(bits.begin(), bits.end(), std::size_t{0}));
}

CorrespondenceMask build_mask(const DistanceTable& table, const SliceSet& inputs,
                              const SliceSet& outputs, double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold))
    throw DomainError("correspondence threshold must be finite and >= 0");
  if (table.rows != outputs.size() || table.cols != inputs.size())
    throw ShapeError("distance table does not match the slice sets");
  CorrespondenceMask mask;
  mask.rows = table.rows;
  mask.cols = table.cols;
  mask.threshold = threshold;
  mask.metric = table.metric;
  mask.inputs = inputs;
  mask.outputs = outputs;
  mask.bits.resize(mask.rows * mask.cols);
  const double limit = threshold + kThresholdSlack * std::max(1.0, threshold);
  for (std::size_t j = 0; j < mask.rows; ++j) {
    for (std::size_t i = 0; i < mask.cols; ++i)
      mask.bits[j * mask.cols + i] = table.at(j, i) <= limit ? 1 : 0;
    if (mask.row_count(j) == 0)
      throw ConstructionError("output slice " + std::to_string(outputs.labels[j]) +
                              " has no input slice within distance " + std::to_string(threshold));
  }
  return mask;
}

CorrespondenceMask build_mask(const SliceSet& inputs, const SliceSet& outputs, double threshold,
                              MetricTag metric) {
  if (inputs.metric != metric || outputs.metric != metric)
    throw DomainError("slice sets are not on the " + std::string(to_string(metric)) + " manifold");
  return build_mask(DistanceTable::compute(inputs, outputs), inputs, outputs, threshold);
}

double mask_density(const CorrespondenceMask& mask) {
  if (mask.bits.empty()) return 0.0;
  return static_cast<double>(mask.count()) / static_cast<double>(mask.bits.size());
}

LayerSpec compose_layer_spec(std::shared_ptr<const CorrespondenceMask> mask,
                             std::size_t kernel_size) {
  if (!mask) throw UsageError("compose_layer_spec needs a mask");
  if (kernel_size % 2 == 0) throw DomainError("kernel size must be odd");
  LayerSpec spec;
  spec.kind = mask->metric == MetricTag::tangent_klein ? LayerKind::conv3d : LayerKind::conv2d;
  spec.kernel_size = kernel_size;
  spec.in_slices = mask->cols;
  spec.out_slices = mask->rows;
  switch (mask->metric) {
  case MetricTag::circle: spec.label = "COL"; break;
  case MetricTag::klein: spec.label = "KOL"; break;
  case MetricTag::tangent_klein: spec.label = "6MKOL"; break;
  }
  spec.mask = std::move(mask);
  return spec;
}

void write_mask_csv(const CorrespondenceMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "'");
  out << "out\\in";
  for (std::size_t i = 0; i < mask.cols; ++i) out << ',' << mask.inputs.labels.at(i);
  out << '\n';
  for (std::size_t j = 0; j < mask.rows; ++j) {
    out << mask.outputs.labels.at(j);
    for (std::size_t i = 0; i < mask.cols; ++i) out << ',' << (mask.at(j, i) ? 1 : 0);
    out << '\n';
  }
}

namespace {

nlohmann::json point_json(const SlicePoint& p) {
  struct Visitor {
    nlohmann::json operator()(const CirclePoint& c) const { return {{"theta", c.theta}}; }
    nlohmann::json operator()(const KleinPoint& k) const {
      return {{"theta1", k.theta1}, {"theta2", k.theta2}};
    }
    nlohmann::json operator()(const TangentKleinPoint& q) const {
      return {{"theta1", q.base.theta1}, {"theta2", q.base.theta2}, {"r", q.base.r},
              {"u", q.u},                {"v", q.v},                {"w", q.w}};
    }
  };
  return std::visit(Visitor{}, p);
}

nlohmann::json slices_json(const SliceSet& set) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::json entry = point_json(set.points[i]);
    entry["label"] = set.labels[i];
    arr.push_back(std::move(entry));
  }
  return arr;
}

} // namespace

void write_mask_json(const CorrespondenceMask& mask, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["metric_tag"] = std::string(to_string(mask.metric));
  doc["threshold"] = mask.threshold;
  doc["rows"] = mask.rows;
  doc["cols"] = mask.cols;
  doc["density"] = mask_density(mask);
  doc["inputs"] = slices_json(mask.inputs);
  doc["outputs"] = slices_json(mask.outputs);
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

} // namespace tcnn
