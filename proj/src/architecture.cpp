#include <cmath>
#include <optional>

#include "tcnn/experiment.hpp"
#include "tcnn/topo_graph.hpp"

namespace tcnn {

std::string Architecture::label() const {
  std::string out;
  for (const std::string& n : names) {
    if (n == "fc" || n == "pool") continue;
    if (!out.empty()) out += '+';
    out += n;
  }
  return out;
}

namespace {

struct LayerParams {
  const LayerConfig& layer;

  std::string where() const { return "layer." + std::to_string(layer.index) + " (" + layer.type + ")"; }

  bool has(const std::string& key) const { return layer.params.count(key) != 0; }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback) const {
    const auto it = layer.params.find(key);
    if (it == layer.params.end()) {
      if (!fallback) throw ConfigError(where() + ": missing '" + key + "'");
      return *fallback;
    }
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size() || v <= 0) throw std::invalid_argument("");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(where() + ": '" + key + "' must be a positive integer, got '" + it->second + "'");
    }
  }

  double real(const std::string& key) const {
    const auto it = layer.params.find(key);
    if (it == layer.params.end()) throw ConfigError(where() + ": missing '" + key + "'");
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size() || !std::isfinite(v)) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where() + ": '" + key + "' must be a number, got '" + it->second + "'");
    }
  }

  std::size_t kernel() const {
    const std::size_t k = count("kernel", 3);
    if (k % 2 == 0) throw ConfigError(where() + ": kernel must be odd");
    return k;
  }

  std::vector<Submanifold> tags(const std::vector<Submanifold>& fallback) const {
    const auto it = layer.params.find("tags");
    if (it == layer.params.end()) return fallback;
    std::vector<Submanifold> out;
    std::string item;
    for (char ch : it->second + ",") {
      if (ch == ',') {
        if (!item.empty()) {
          try {
            out.push_back(parse_submanifold(item));
          } catch (const DomainError&) {
            throw ConfigError(where() + ": unknown submanifold '" + item + "'");
          }
        }
        item.clear();
      } else if (ch != ' ') {
        item += ch;
      }
    }
    if (out.empty()) throw ConfigError(where() + ": empty tag list");
    return out;
  }
};

// Manifold labels carried by the current slices, if any.
struct Labels {
  std::optional<SliceSet> set;
  std::size_t n1 = 0, n2 = 0;
  std::vector<Submanifold> tags;
};

std::vector<TangentKleinPoint> tangent_points(const std::vector<Submanifold>& tags, std::size_t n1,
                                              std::size_t n2) {
  std::vector<TangentKleinPoint> pts;
  for (Submanifold t : tags)
    for (const TangentKleinPoint& q : discretize_submanifold(t, n1, n2)) pts.push_back(q);
  return pts;
}

LayerSpec plain(LayerKind kind) {
  LayerSpec spec;
  spec.kind = kind;
  return spec;
}

std::shared_ptr<const CorrespondenceMask> make_mask(const LayerParams& p, const SliceSet& in,
                                                    const SliceSet& out) {
  const double s = p.real("threshold");
  try {
    return std::make_shared<const CorrespondenceMask>(build_mask(in, out, s, in.metric));
  } catch (const Error& e) {
    throw ConfigError(p.where() + ": " + e.what());
  }
}

} // namespace

Architecture build_architecture(const ExperimentConfig& cfg, const Shape& sample_shape,
                                std::size_t classes) {
  if (sample_shape.size() < 3) throw ConfigError("samples must be images or videos");
  if (cfg.layers.empty()) throw ConfigError("no layers declared (layer.N.type)");
  Architecture arch;
  std::size_t slices = sample_shape[0];
  const std::size_t grid_dims = sample_shape.size() - 1;
  Labels labels;
  const std::vector<Submanifold> all_tags(std::begin(kAllSubmanifolds), std::end(kAllSubmanifolds));

  for (std::size_t li = 0; li < cfg.layers.size(); ++li) {
    const LayerConfig& layer = cfg.layers[li];
    const LayerParams p{layer};
    const bool last = li + 1 == cfg.layers.size();
    const std::string& type = layer.type;
    LayerSpec spec;
    spec.label = type == "MF" ? "M-F" : type;

    auto need_dims = [&](std::size_t d) {
      if (grid_dims != d)
        throw ConfigError(p.where() + ": needs " + std::to_string(d) + "D samples, data is " +
                          std::to_string(grid_dims) + "D");
    };

    if (type == "NOL" || type == "conv3d") {
      need_dims(type == "NOL" ? 2 : 3);
      spec.kind = type == "NOL" ? LayerKind::conv2d : LayerKind::conv3d;
      spec.kernel_size = p.kernel();
      spec.out_slices = p.count("slices", 64);
      labels = {};
    } else if (type == "CF" || type == "KF" || type == "Gabor" || type == "MF") {
      need_dims(type == "MF" ? 3 : 2);
      const std::size_t k = p.kernel();
      std::shared_ptr<FilterBank> bank;
      labels = {};
      if (type == "CF") {
        const std::size_t n = p.count("slices", 64);
        bank = std::make_shared<FilterBank>(make_cf_bank(n, k));
        const auto pts = discretize_circle(n);
        labels.set = SliceSet::circle(pts);
      } else if (type == "KF") {
        labels.n1 = p.count("n1", 8);
        labels.n2 = p.count("n2", 8);
        bank = std::make_shared<FilterBank>(make_kf_bank(labels.n1, labels.n2, k));
        const auto pts = discretize_klein(labels.n1, labels.n2);
        labels.set = SliceSet::klein(pts);
      } else if (type == "Gabor") {
        const auto family = reference_gabor_family();
        bank = std::make_shared<FilterBank>(make_gabor_bank(family, k));
      } else {
        labels.tags = p.tags(all_tags);
        labels.n1 = p.count("n1", 2);
        labels.n2 = p.count("n2", 2);
        bank = std::make_shared<FilterBank>(make_mf_bank(labels.tags, labels.n1, labels.n2, k));
        const auto pts = tangent_points(labels.tags, labels.n1, labels.n2);
        labels.set = SliceSet::tangent_klein(pts);
      }
      spec.kind = type == "MF" ? LayerKind::fixed_filter_3d : LayerKind::fixed_filter_2d;
      spec.kernel_size = k;
      spec.out_slices = bank->size();
      spec.bank = std::move(bank);
    } else if (type == "COL") {
      need_dims(2);
      if (labels.set && labels.set->metric != MetricTag::circle)
        throw ConfigError(p.where() + ": incoming slices are labelled by the " +
                          std::string(to_string(labels.set->metric)) + " manifold");
      const auto in_pts = discretize_circle(slices);
      const SliceSet in = labels.set ? *labels.set : SliceSet::circle(in_pts);
      const auto out_pts = discretize_circle(p.count("slices", slices));
      const SliceSet out = SliceSet::circle(out_pts);
      spec = compose_layer_spec(make_mask(p, in, out), p.kernel());
      labels = {};
      labels.set = out;
    } else if (type == "KOL") {
      need_dims(2);
      if (labels.set && labels.set->metric != MetricTag::klein)
        throw ConfigError(p.where() + ": incoming slices are labelled by the " +
                          std::string(to_string(labels.set->metric)) + " manifold");
      SliceSet in;
      std::size_t in1 = labels.n1, in2 = labels.n2;
      if (labels.set) {
        in = *labels.set;
      } else {
        in1 = p.count("n1", std::nullopt);
        in2 = p.count("n2", std::nullopt);
        if (in1 * in2 != slices)
          throw ConfigError(p.where() + ": a " + std::to_string(in1) + "x" + std::to_string(in2) +
                            " Klein grid does not label " + std::to_string(slices) + " incoming slices");
        const auto pts = discretize_klein(in1, in2);
        in = SliceSet::klein(pts);
      }
      const std::size_t n1 = p.count("n1", in1), n2 = p.count("n2", in2);
      const auto out_pts = discretize_klein(n1, n2);
      const SliceSet out = SliceSet::klein(out_pts);
      spec = compose_layer_spec(make_mask(p, in, out), p.kernel());
      labels = {};
      labels.set = out;
      labels.n1 = n1;
      labels.n2 = n2;
    } else if (type == "6MKOL") {
      need_dims(3);
      if (!labels.set || labels.set->metric != MetricTag::tangent_klein)
        throw ConfigError(p.where() + ": must follow a layer whose slices are labelled by T(K^t) (MF or 6MKOL)");
      const SliceSet in = *labels.set;
      const auto tags = p.tags(labels.tags);
      const std::size_t n1 = p.count("n1", labels.n1), n2 = p.count("n2", labels.n2);
      const auto out_pts = tangent_points(tags, n1, n2);
      const SliceSet out = SliceSet::tangent_klein(out_pts);
      spec = compose_layer_spec(make_mask(p, in, out), p.kernel());
      labels = {};
      labels.set = out;
      labels.tags = tags;
      labels.n1 = n1;
      labels.n2 = n2;
    } else if (type == "pool") {
      spec.kind = grid_dims == 2 ? LayerKind::maxpool2d : LayerKind::maxpool3d;
      spec.kernel_size = p.count("window", 2);
    } else if (type == "fc") {
      spec.kind = LayerKind::fully_connected;
      spec.out_slices = p.count("units", last ? std::optional<std::size_t>(classes) : std::nullopt);
      if (last && spec.out_slices != classes)
        throw ConfigError(p.where() + ": the last layer must have " + std::to_string(classes) +
                          " units (one per class)");
      labels = {};
    } else {
      throw ConfigError(p.where() + ": unknown layer type");
    }

    if (spec.kind != LayerKind::maxpool2d && spec.kind != LayerKind::maxpool3d &&
        spec.kind != LayerKind::fully_connected)
      slices = spec.out_slices;
    arch.specs.push_back(spec);
    arch.names.push_back(spec.label);
    if (last && spec.kind != LayerKind::fully_connected)
      throw ConfigError(p.where() + ": the last layer must be fc");
    if (!last && type != "pool") arch.specs.push_back(plain(LayerKind::relu));
  }
  arch.specs.push_back(plain(LayerKind::softmax_xent));
  return arch;
}

} // namespace tcnn
