#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "tcnn/experiment.hpp"

namespace tcnn {

std::string_view to_string(NoiseDirection d) {
  return d == NoiseDirection::noisy_train ? "noisy-train" : "noisy-test";
}

NoiseSpec ExperimentConfig::effective_noise() const {
  NoiseSpec spec = noise;
  if (!noise_seed_set) spec.seed = seed;
  return spec;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

NoiseDirection to_direction(const std::string& key, const std::string& v) {
  if (v == "noisy-train" || v == "train") return NoiseDirection::noisy_train;
  if (v == "noisy-test" || v == "test") return NoiseDirection::noisy_test;
  throw ConfigError(key + ": expected noisy-train or noisy-test, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& v, F&& conv) {
  std::vector<T> out;
  for (const std::string& item : split_list(v)) out.push_back(conv(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& str) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += str(items[i]);
  }
  return out;
}

const std::map<std::string, std::set<std::string>>& layer_params() {
  static const std::map<std::string, std::set<std::string>> params{
      {"NOL", {"slices", "kernel"}},
      {"CF", {"slices", "kernel"}},
      {"KF", {"n1", "n2", "kernel"}},
      {"Gabor", {"kernel"}},
      {"COL", {"slices", "threshold", "kernel"}},
      {"KOL", {"n1", "n2", "threshold", "kernel"}},
      {"conv3d", {"slices", "kernel"}},
      {"MF", {"tags", "n1", "n2", "kernel"}},
      {"6MKOL", {"tags", "n1", "n2", "threshold", "kernel"}},
      {"pool", {"window"}},
      {"fc", {"units"}},
  };
  return params;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& v)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"name", [](auto& c, auto&, auto& v) { c.name = v; }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = to_u64(k, v); }},
      {"lr", [](auto& c, auto& k, auto& v) { c.lr = to_double(k, v); }},
      {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = to_u64(k, v); }},
      {"epochs", [](auto& c, auto& k, auto& v) { c.epochs = to_u64(k, v); }},
      {"max_steps", [](auto& c, auto& k, auto& v) { c.max_steps = to_u64(k, v); }},
      {"eval.every", [](auto& c, auto& k, auto& v) { c.eval_every = to_u64(k, v); }},
      {"eval.at", [](auto& c, auto& k, auto& v) {
         c.eval_at = to_list<std::size_t>(v, [&](const std::string& s) { return to_u64(k, s); });
       }},
      {"data.source", [](auto& c, auto& k, auto& v) {
         if (v != "mnist" && v != "video") throw ConfigError(k + ": expected mnist or video");
         c.data_source = v;
       }},
      {"data.dir", [](auto& c, auto&, auto& v) { c.data_dir = v; }},
      {"data.subset", [](auto& c, auto& k, auto& v) { c.data_subset = to_u64(k, v); }},
      {"data.train_fraction", [](auto& c, auto& k, auto& v) { c.train_fraction = to_double(k, v); }},
      {"data.split_seed", [](auto& c, auto& k, auto& v) { c.split_seed = to_u64(k, v); }},
      {"data.resize", [](auto& c, auto& k, auto& v) { c.resize = to_u64(k, v); }},
      {"video.classes", [](auto& c, auto& k, auto& v) {
         c.video_classes = to_list<Submanifold>(v, [&](const std::string& s) {
           try {
             return parse_submanifold(s);
           } catch (const DomainError&) {
             throw ConfigError(k + ": unknown submanifold '" + s + "'");
           }
         });
       }},
      {"video.per_class", [](auto& c, auto& k, auto& v) { c.video_per_class = to_u64(k, v); }},
      {"video.frames", [](auto& c, auto& k, auto& v) { c.video_frames = to_u64(k, v); }},
      {"video.size", [](auto& c, auto& k, auto& v) { c.video_size = to_u64(k, v); }},
      {"video.train_seed", [](auto& c, auto& k, auto& v) { c.video_train_seed = to_u64(k, v); }},
      {"video.test_seed", [](auto& c, auto& k, auto& v) { c.video_test_seed = to_u64(k, v); }},
      {"noise.tau", [](auto& c, auto& k, auto& v) { c.noise.tau = to_double(k, v); }},
      {"noise.mu_var", [](auto& c, auto& k, auto& v) { c.noise.mu_var = to_double(k, v); }},
      {"noise.omega_sq", [](auto& c, auto& k, auto& v) { c.noise.omega_sq = to_double(k, v); }},
      {"noise.seed", [](auto& c, auto& k, auto& v) {
         c.noise.seed = to_u64(k, v);
         c.noise_seed_set = true;
       }},
      {"noise.clamp", [](auto& c, auto& k, auto& v) { c.noise.clamp = to_bool(k, v); }},
      {"noise.direction", [](auto& c, auto& k, auto& v) { c.noise_direction = to_direction(k, v); }},
      {"sweep.taus", [](auto& c, auto& k, auto& v) {
         c.sweep_taus = to_list<double>(v, [&](const std::string& s) { return to_double(k, s); });
       }},
      {"sweep.omegas", [](auto& c, auto& k, auto& v) {
         c.sweep_omegas = to_list<double>(v, [&](const std::string& s) { return to_double(k, s); });
       }},
      {"sweep.report_epochs", [](auto& c, auto& k, auto& v) {
         c.sweep_report_epochs = to_list<std::size_t>(v, [&](const std::string& s) { return to_u64(k, s); });
       }},
      {"sweep.directions", [](auto& c, auto& k, auto& v) {
         c.sweep_directions = to_list<NoiseDirection>(v, [&](const std::string& s) { return to_direction(k, s); });
       }},
      {"generalize.target", [](auto& c, auto& k, auto& v) {
         if (v != "same" && v != "noisy" && v != "idx" && v != "video")
           throw ConfigError(k + ": expected same, noisy, idx or video");
         c.generalize_target = v;
       }},
      {"generalize.images", [](auto& c, auto&, auto& v) { c.generalize_images = v; }},
      {"generalize.labels", [](auto& c, auto&, auto& v) { c.generalize_labels = v; }},
      {"generalize.seed", [](auto& c, auto& k, auto& v) { c.generalize_seed = to_u64(k, v); }},
      {"metrics.wallclock", [](auto& c, auto& k, auto& v) { c.metrics_wallclock = to_bool(k, v); }},
      {"metrics.json", [](auto& c, auto& k, auto& v) { c.metrics_json = to_bool(k, v); }},
      {"save.checkpoint", [](auto& c, auto& k, auto& v) { c.save_checkpoint = to_bool(k, v); }},
  };
  return table;
}

void validate(const ExperimentConfig& c, const std::map<std::string, std::size_t>& key_lines) {
  auto at = [&](const std::string& key) {
    const auto it = key_lines.find(key);
    return it == key_lines.end() ? key : "line " + std::to_string(it->second) + ": " + key;
  };
  if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (c.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError("data.train_fraction must lie in (0, 1)");
  if (c.noise.mu_var < 0.0 || c.noise.omega_sq < 0.0)
    throw ConfigError("noise.mu_var and noise.omega_sq must be >= 0");
  if (c.video_classes.empty()) throw ConfigError("video.classes must not be empty");
  if (c.video_per_class == 0 || c.video_frames == 0 || c.video_size == 0)
    throw ConfigError("video sizes must be >= 1");
  if (c.layers.empty()) throw ConfigError("no layers declared (layer.N.type)");
  for (const LayerConfig& l : c.layers) {
    if (l.type.empty())
      throw ConfigError("layer." + std::to_string(l.index) + " has parameters but no type");
    const auto it = layer_params().find(l.type);
    if (it == layer_params().end())
      throw ConfigError(at("layer." + std::to_string(l.index) + ".type") + ": unknown layer type '" + l.type + "'");
    for (const auto& [key, value] : l.params)
      if (!it->second.count(key))
        throw ConfigError(at("layer." + std::to_string(l.index) + "." + key) + ": not a parameter of " + l.type);
  }
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::map<int, LayerConfig> layers;
  std::map<std::string, std::size_t> key_lines;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!key_lines.emplace(key, line_no).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      if (key.rfind("layer.", 0) == 0) {
        const auto dot = key.find('.', 6);
        if (dot == std::string::npos) throw ConfigError(key + ": expected layer.N.<param>");
        const std::string num = key.substr(6, dot - 6);
        const int index = static_cast<int>(to_u64(key, num));
        LayerConfig& l = layers[index];
        l.index = index;
        const std::string param = key.substr(dot + 1);
        if (param == "type")
          l.type = value;
        else
          l.params[param] = value;
        continue;
      }
      const auto it = setters().find(key);
      if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
      it->second(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (auto& [index, l] : layers) cfg.layers.push_back(std::move(l));
  validate(cfg, key_lines);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
  auto u = [](std::uint64_t v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv("name", name);
  kv("seed", u(seed));
  kv("lr", fmt(lr));
  kv("batch_size", u(batch_size));
  kv("epochs", u(epochs));
  kv("max_steps", u(max_steps));
  kv("eval.every", u(eval_every));
  kv("eval.at", join(eval_at, u));
  kv("data.source", data_source);
  kv("data.dir", data_dir.string());
  kv("data.subset", u(data_subset));
  kv("data.train_fraction", fmt(train_fraction));
  kv("data.split_seed", u(effective_split_seed()));
  kv("data.resize", u(resize));
  kv("video.classes", join(video_classes, [](Submanifold t) { return std::string(to_string(t)); }));
  kv("video.per_class", u(video_per_class));
  kv("video.frames", u(video_frames));
  kv("video.size", u(video_size));
  kv("video.train_seed", u(video_train_seed));
  kv("video.test_seed", u(video_test_seed));
  const NoiseSpec n = effective_noise();
  kv("noise.tau", fmt(n.tau));
  kv("noise.mu_var", fmt(n.mu_var));
  kv("noise.omega_sq", fmt(n.omega_sq));
  kv("noise.seed", u(n.seed));
  kv("noise.clamp", b(n.clamp));
  kv("noise.direction", std::string(to_string(noise_direction)));
  kv("sweep.taus", join(sweep_taus, fmt));
  kv("sweep.omegas", join(sweep_omegas, fmt));
  kv("sweep.report_epochs", join(sweep_report_epochs, u));
  kv("sweep.directions",
     join(sweep_directions, [](NoiseDirection d) { return std::string(to_string(d)); }));
  kv("generalize.target", generalize_target);
  kv("generalize.images", generalize_images.string());
  kv("generalize.labels", generalize_labels.string());
  kv("generalize.seed", u(generalize_seed));
  kv("metrics.wallclock", b(metrics_wallclock));
  kv("metrics.json", b(metrics_json));
  kv("save.checkpoint", b(save_checkpoint));
  for (const LayerConfig& l : layers) {
    const std::string prefix = "layer." + std::to_string(l.index) + ".";
    kv(prefix + "type", l.type);
    for (const auto& [key, value] : l.params) kv(prefix + key, value);
  }
  return o.str();
}

} // namespace tcnn
