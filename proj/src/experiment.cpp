#include "tcnn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tcnn/checkpoint.hpp"

namespace tcnn {

// --- metrics ------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

void write_metrics_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                       const std::vector<MetricsRecord>& records) {
  std::ofstream out = open_out(path);
  std::istringstream echo(cfg.to_text());
  for (std::string line; std::getline(echo, line);) out << "# " << line << '\n';
  out << kMetricsHeader << '\n';
  for (const MetricsRecord& r : records)
    out << r.step << ',' << r.epoch << ',' << r.split << ',' << num(r.loss) << ',' << num(r.accuracy)
        << ',' << r.wallclock_ms << '\n';
  if (!out) throw DataError(DataError::Kind::io, "write failed for '" + path.string() + "'");
}

void write_metrics_json(const std::filesystem::path& path, const ExperimentConfig& cfg,
                        const std::vector<MetricsRecord>& records) {
  nlohmann::json doc;
  doc["config"] = cfg.to_text();
  doc["records"] = nlohmann::json::array();
  for (const MetricsRecord& r : records)
    doc["records"].push_back({{"step", r.step},
                              {"epoch", r.epoch},
                              {"split", r.split},
                              {"loss", r.loss},
                              {"accuracy", r.accuracy},
                              {"wallclock_ms", r.wallclock_ms}});
  std::ofstream out = open_out(path);
  out << doc.dump(2) << '\n';
}

// --- training -----------------------------------------------------------------------

Samples to_samples(const ImageDataset& ds) { return {ds.images, ds.labels, ds.classes}; }

Samples to_samples(const VideoDataset& ds) { return {ds.videos, ds.labels, ds.classes()}; }

namespace {

Tensor<float> gather_batch(const Samples& s, std::span<const std::size_t> idx, std::vector<int>& labels) {
  Shape shape = s.data.shape();
  shape[0] = idx.size();
  Tensor<float> batch(shape);
  const std::size_t plane = s.data.size() / s.size();
  labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(s.data.data() + idx[i] * plane, plane, batch.data() + i * plane);
    labels[i] = s.labels[idx[i]];
  }
  return batch;
}

double batch_accuracy(const Tensor<float>& logits, std::span<const int> labels) {
  const std::vector<int> pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

} // namespace

Evaluation evaluate(Network<float>& net, const Samples& samples, std::size_t batch) {
  Evaluation ev;
  ev.class_accuracy.assign(samples.classes, 0.0);
  ev.class_count.assign(samples.classes, 0);
  std::vector<std::size_t> hits(samples.classes, 0);
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor<float> x = gather_batch(samples, idx, labels);
    const Tensor<float> logits = net.forward(x);
    const LossResult<float> l = softmax_xent_loss(logits, std::span<const int>(labels));
    loss_sum += l.loss * static_cast<double>(labels.size());
    const std::vector<int> pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      ++ev.class_count[c];
      if (pred[i] == labels[i]) {
        ++correct;
        ++hits[c];
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  ev.loss = samples.size() ? loss_sum / n : 0.0;
  ev.accuracy = samples.size() ? static_cast<double>(correct) / n : 0.0;
  for (std::size_t c = 0; c < samples.classes; ++c)
    ev.class_accuracy[c] =
        ev.class_count[c] ? static_cast<double>(hits[c]) / static_cast<double>(ev.class_count[c]) : 0.0;
  return ev;
}

TrainResult train_network(Network<float>& net, const ExperimentConfig& cfg, const Samples& train,
                          std::span<const EvalSet> evals) {
  if (train.size() == 0) throw DataError(DataError::Kind::format, "training set is empty");
  TrainResult result;
  AdamState<float> adam;
  adam.lr = cfg.lr;
  const std::vector<Parameter<float>*> params = net.parameters();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&]() -> std::int64_t {
    if (!cfg.metrics_wallclock) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
        .count();
  };
  auto run_evals = [&](std::size_t step, std::size_t epoch) {
    std::vector<Evaluation> out;
    for (const EvalSet& set : evals) {
      Evaluation ev = evaluate(net, *set.samples);
      result.records.push_back({step, epoch, set.split, ev.loss, ev.accuracy, elapsed()});
      out.push_back(std::move(ev));
    }
    return out;
  };

  const std::size_t n = train.size();
  std::size_t step = 0;
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(n, cfg.seed * 1000003ull + epoch);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const Tensor<float> x =
          gather_batch(train, std::span<const std::size_t>(order).subspan(begin, end - begin), labels);
      net.zero_grad();
      const Tensor<float> logits = net.forward(x);
      const LossResult<float> loss = softmax_xent_loss(logits, std::span<const int>(labels));
      if (!std::isfinite(loss.loss))
        throw NumericError("non-finite loss at step " + std::to_string(step + 1));
      net.backward(loss.grad_logits);
      adam_step(std::span<Parameter<float>* const>(params), adam);
      ++step;
      result.records.push_back(
          {step, epoch, "train", loss.loss, batch_accuracy(logits, labels), elapsed()});

      const bool stop = cfg.max_steps != 0 && step == cfg.max_steps;
      const bool epoch_end = end == n || stop;
      const bool listed = std::find(cfg.eval_at.begin(), cfg.eval_at.end(), step) != cfg.eval_at.end();
      const bool cadence = cfg.eval_every != 0 && step % cfg.eval_every == 0;
      if (epoch_end || listed || cadence) {
        std::vector<Evaluation> ev = run_evals(step, epoch);
        if (listed) result.at_steps.push_back(ev);
        if (epoch_end) result.epoch_end.push_back(std::move(ev));
      }
      if (stop) return result;
    }
  }
  return result;
}

// --- runners ------------------------------------------------------------------------

namespace {

const ImageDataset& cached_mnist(const std::filesystem::path& dir) {
  static std::map<std::filesystem::path, ImageDataset> cache;
  auto it = cache.find(dir);
  if (it == cache.end()) it = cache.emplace(dir, load_mnist(dir)).first;
  return it->second;
}

Network<float> make_network(const ExperimentConfig& cfg, const Samples& train, std::string& label) {
  const Architecture arch = build_architecture(cfg, train.sample_shape(), train.classes);
  label = arch.label();
  try {
    return build_network<float>(arch.specs, train.sample_shape(), cfg.seed);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("architecture does not chain: ") + e.what());
  }
}

RunResult finish(const ExperimentConfig& cfg, Network<float>& net, RunResult run,
                 const std::filesystem::path& out_dir) {
  run.metrics_path = out_dir / "metrics.csv";
  write_metrics_csv(run.metrics_path, cfg, run.train.records);
  if (cfg.metrics_json) write_metrics_json(out_dir / "metrics.json", cfg, run.train.records);
  if (cfg.save_checkpoint) save_checkpoint(net, out_dir / "model.tcnn");
  return run;
}

RunResult train_and_write(const ExperimentConfig& cfg, const Samples& train, std::span<const EvalSet> evals,
                          const std::filesystem::path& out_dir) {
  RunResult run;
  Network<float> net = make_network(cfg, train, run.architecture);
  std::filesystem::create_directories(out_dir);
  run.train = train_network(net, cfg, train, evals);
  return finish(cfg, net, std::move(run), out_dir);
}

std::pair<VideoDataset, VideoDataset> video_splits(const ExperimentConfig& cfg) {
  const std::size_t s = cfg.video_size;
  return {make_synthetic_videos(cfg.video_classes, cfg.video_per_class, cfg.video_frames, s, s,
                                cfg.video_train_seed),
          make_synthetic_videos(cfg.video_classes, cfg.video_per_class, cfg.video_frames, s, s,
                                cfg.video_test_seed)};
}

void require_images(const ExperimentConfig& cfg, const char* verb) {
  if (cfg.data_source != "mnist")
    throw ConfigError(std::string(verb) + " needs data.source = mnist");
}

} // namespace

std::pair<ImageDataset, ImageDataset> load_image_splits(const ExperimentConfig& cfg) {
  if (cfg.data_dir.empty())
    throw DataError(DataError::Kind::io, "no data directory: set data.dir, --data or TCNN_DATA_DIR");
  ImageDataset all = cached_mnist(cfg.data_dir);
  if (cfg.data_subset != 0 && cfg.data_subset < all.size()) {
    const std::vector<std::size_t> order = shuffled_indices(all.size(), cfg.effective_split_seed() ^ 0xA5A5A5A5ull);
    all = subset(all, std::span<const std::size_t>(order).first(cfg.data_subset));
  }
  if (cfg.resize != 0) all = resize_bilinear(all, cfg.resize, cfg.resize);
  return split(all, cfg.train_fraction, cfg.effective_split_seed());
}

RunResult run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.data_source == "video") return run_video(cfg, out_dir);
  const auto [train, test] = load_image_splits(cfg);
  const Samples tr = to_samples(train), te = to_samples(test);
  const EvalSet evals[] = {{"test", &te}};
  return train_and_write(cfg, tr, evals, out_dir);
}

RunResult run_noise_experiment(const ExperimentConfig& base, const NoiseSpec& spec,
                               NoiseDirection direction, const std::filesystem::path& out_dir) {
  require_images(base, "the noise experiment");
  ExperimentConfig cfg = base;
  cfg.noise = spec;
  cfg.noise_seed_set = true;
  cfg.noise_direction = direction;
  auto [train, test] = load_image_splits(cfg);
  if (direction == NoiseDirection::noisy_train)
    train = add_class_noise(train, spec);
  else
    test = add_class_noise(test, spec);
  const Samples tr = to_samples(train), te = to_samples(test);
  const EvalSet evals[] = {{"test", &te}};
  return train_and_write(cfg, tr, evals, out_dir);
}

std::filesystem::path run_sweep(const ExperimentConfig& base, std::span<const SweepEntry> entries,
                                const std::filesystem::path& out_dir) {
  require_images(base, "the sweep");
  if (entries.empty()) throw ConfigError("sweep has no entries");
  ExperimentConfig cfg = base;
  for (std::size_t e : cfg.sweep_report_epochs) {
    if (e == 0) throw ConfigError("sweep.report_epochs must be >= 1");
    cfg.epochs = std::max(cfg.epochs, e);
  }
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path csv = out_dir / "sweep.csv";
  std::ofstream out = open_out(csv);
  out << "family,value,direction,epoch,train_loss,test_accuracy\n";
  for (const SweepEntry& entry : entries) {
    for (NoiseDirection dir : cfg.sweep_directions) {
      const std::string tag = entry.family + "_" + num(entry.value) + "_" + std::string(to_string(dir));
      const RunResult run = run_noise_experiment(cfg, entry.spec, dir, out_dir / tag);
      for (std::size_t e : cfg.sweep_report_epochs) {
        double loss_sum = 0.0;
        std::size_t count = 0;
        for (const MetricsRecord& r : run.train.records)
          if (r.split == "train" && r.epoch == e) {
            loss_sum += r.loss;
            ++count;
          }
        out << entry.family << ',' << num(entry.value) << ',' << to_string(dir) << ',' << e << ','
            << num(count ? loss_sum / static_cast<double>(count) : 0.0) << ','
            << num(run.train.epoch_end.at(e - 1).at(0).accuracy) << '\n';
      }
      out.flush();
    }
  }
  return csv;
}

RunResult run_generalization(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.data_source == "video" || cfg.generalize_target == "video") {
    if (cfg.data_source != "video") throw ConfigError("generalize.target = video needs data.source = video");
    const auto [train, test] = video_splits(cfg);
    const std::size_t s = cfg.video_size;
    const VideoDataset other = make_synthetic_videos(cfg.video_classes, cfg.video_per_class,
                                                     cfg.video_frames, s, s, cfg.generalize_seed);
    const Samples tr = to_samples(train), te = to_samples(test), ge = to_samples(other);
    const EvalSet evals[] = {{"test", &te}, {"generalization", &ge}};
    return train_and_write(cfg, tr, evals, out_dir);
  }
  const auto [train, test] = load_image_splits(cfg);
  ImageDataset other;
  if (cfg.generalize_target == "same") {
    other = test;
  } else if (cfg.generalize_target == "noisy") {
    other = add_class_noise(test, cfg.effective_noise());
  } else {
    if (cfg.generalize_images.empty() || cfg.generalize_labels.empty())
      throw ConfigError("generalize.target = idx needs generalize.images and generalize.labels");
    other = resize_bilinear(load_idx(cfg.generalize_images, cfg.generalize_labels), train.height(),
                            train.width());
  }
  if (other.height() != train.height() || other.width() != train.width())
    throw DataError(DataError::Kind::format, "generalization images are " +
                                                 shape_string(other.images.shape()) +
                                                 " after resizing, training images " +
                                                 shape_string(train.images.shape()));
  if (other.classes > train.classes)
    throw DataError(DataError::Kind::format, "generalization set has more classes than the training set");
  other.classes = train.classes;
  const Samples tr = to_samples(train), te = to_samples(test), ge = to_samples(other);
  const EvalSet evals[] = {{"test", &te}, {"generalization", &ge}};
  return train_and_write(cfg, tr, evals, out_dir);
}

RunResult run_video(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.data_source != "video") throw ConfigError("the video verb needs data.source = video");
  const auto [train, test] = video_splits(cfg);
  const Samples tr = to_samples(train), te = to_samples(test);
  const EvalSet evals[] = {{"test", &te}};
  RunResult run = train_and_write(cfg, tr, evals, out_dir);
  const Evaluation& last = run.train.epoch_end.back().front();
  std::ofstream out = open_out(out_dir / "per_class.csv");
  out << "class,tag,count,accuracy\n";
  for (std::size_t c = 0; c < cfg.video_classes.size(); ++c)
    out << c << ',' << to_string(cfg.video_classes[c]) << ',' << last.class_count[c] << ','
        << num(last.class_accuracy[c]) << '\n';
  out << "all,all," << te.size() << ',' << num(last.accuracy) << '\n';
  return run;
}

// --- filter dumps -------------------------------------------------------------------

std::vector<std::filesystem::path> dump_network(Network<float>& net, const Tensor<float>* sample,
                                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  Convolution<float>* conv = nullptr;
  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < net.layer_count() && !conv; ++i)
    if ((conv = dynamic_cast<Convolution<float>*>(&net.layer(i)))) conv_index = i;
  if (!conv) throw UsageError("network has no convolution layer to dump");

  std::vector<std::filesystem::path> files;
  const Tensor<float>& w = conv->weights().value;
  const std::size_t out = w.extent(0), in = w.extent(1), k = w.extent(2);
  const std::size_t window = w.size() / (out * in);
  const std::size_t rows = k, cols = window / k;
  char name[64];

  const std::filesystem::path csv = out_dir / "filters.csv";
  std::ofstream table = open_out(csv);
  table << "index,input";
  for (std::size_t t = 0; t < window; ++t) table << ",v" << t;
  table << '\n';
  for (std::size_t j = 0; j < out; ++j) {
    // input slices tiled left to right
    std::vector<double> tile(rows * cols * in);
    for (std::size_t i = 0; i < in; ++i) {
      const float* f = w.data() + (j * in + i) * window;
      table << j << ',' << i;
      for (std::size_t t = 0; t < window; ++t) table << ',' << num(f[t]);
      table << '\n';
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) tile[r * cols * in + i * cols + c] = f[r * cols + c];
    }
    std::snprintf(name, sizeof name, "filter_%03zu.pgm", j);
    write_pgm(tile, cols * in, rows, out_dir / name);
    files.push_back(out_dir / name);
  }
  files.insert(files.begin(), csv);

  if (sample) {
    Tensor<float> x = *sample;
    if (x.rank() == net.input_shape().size()) {
      Shape s{1};
      s.insert(s.end(), x.shape().begin(), x.shape().end());
      x.reshape(s);
    }
    const std::vector<Tensor<float>> trace = net.forward_trace(x);
    const Tensor<float>& act = trace.at(conv_index);
    const std::size_t plane = act.size() / act.extent(1);
    const std::size_t width = act.extent(act.rank() - 1);
    const std::size_t frames = act.rank() == 5 ? act.extent(2) : 1;
    const std::size_t height = act.extent(act.rank() - 2);
    for (std::size_t j = 0; j < act.extent(1); ++j) {
      std::vector<double> img(plane);
      // frames tiled left to right
      for (std::size_t p = 0; p < frames; ++p)
        for (std::size_t r = 0; r < height; ++r)
          for (std::size_t c = 0; c < width; ++c)
            img[r * width * frames + p * width + c] = act[j * plane + (p * height + r) * width + c];
      std::snprintf(name, sizeof name, "activation_%03zu.pgm", j);
      write_pgm(img, width * frames, height, out_dir / name);
      files.push_back(out_dir / name);
    }
  }
  return files;
}

// --- gradient check -----------------------------------------------------------------

GradCheckReport gradient_check(Network<double>& net, const Tensor<double>& input,
                               std::span<const int> labels, double step) {
  auto loss_at = [&]() { return softmax_xent_loss(net.forward(input), labels).loss; };
  net.zero_grad();
  const LossResult<double> base = softmax_xent_loss(net.forward(input), labels);
  net.backward(base.grad_logits);
  GradCheckReport report;
  for (Parameter<double>* p : net.parameters()) {
    if (p->frozen) continue;
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (!p->keep.empty() && !p->keep[i]) continue;
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = loss_at();
      p->value[i] = saved - step;
      const double down = loss_at();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

} // namespace tcnn
