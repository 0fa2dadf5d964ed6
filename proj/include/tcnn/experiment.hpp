#pragma once

// Experiment configs, the training loop and the runners behind the CLI verbs.
//
// Config files are flat `key = value` lines ('#' starts a comment). Layers are
// declared with repeated `layer.N.*` keys, e.g.
//
//   layer.1.type = KF
//   layer.1.n1 = 8
//   layer.1.n2 = 8
//   layer.2.type = KOL
//   layer.2.threshold = 1.2
//   layer.3.type = fc
//   layer.3.units = 512
//   layer.4.type = fc
//
// A ReLU follows every layer except pooling layers and the last one.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcnn/data.hpp"
#include "tcnn/filter_bank.hpp"
#include "tcnn/layer_spec.hpp"
#include "tcnn/network.hpp"

namespace tcnn {

struct LayerConfig {
  int index = 0;
  std::string type;  ///< NOL, CF, KF, Gabor, COL, KOL, conv3d, MF, 6MKOL, pool, fc
  std::map<std::string, std::string> params;
};

enum class NoiseDirection { noisy_train, noisy_test };

std::string_view to_string(NoiseDirection d);

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  double lr = 1e-4;
  std::size_t batch_size = 100;
  std::size_t epochs = 1;
  /// Stop after this many optimizer steps (0: run every epoch).
  std::size_t max_steps = 0;
  /// Evaluate every this many steps (0: only at the end of each epoch) and
  /// additionally at each step in eval_at.
  std::size_t eval_every = 10;
  std::vector<std::size_t> eval_at;

  std::string data_source = "mnist";  ///< mnist | video
  std::filesystem::path data_dir;
  std::size_t data_subset = 0;  ///< 0: all samples
  double train_fraction = 0.85;
  std::optional<std::uint64_t> split_seed;  ///< defaults to seed
  std::size_t resize = 0;                   ///< 0: native resolution

  std::vector<Submanifold> video_classes{std::begin(kAllSubmanifolds), std::end(kAllSubmanifolds)};
  std::size_t video_per_class = 200;
  std::size_t video_frames = 9;
  std::size_t video_size = 9;
  std::uint64_t video_train_seed = 1;
  std::uint64_t video_test_seed = 2;

  NoiseSpec noise;
  bool noise_seed_set = false;  ///< otherwise noise.seed follows seed
  NoiseDirection noise_direction = NoiseDirection::noisy_train;

  std::vector<double> sweep_taus{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<double> sweep_omegas{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::size_t> sweep_report_epochs{1, 5};
  std::vector<NoiseDirection> sweep_directions{NoiseDirection::noisy_train, NoiseDirection::noisy_test};

  std::string generalize_target = "noisy";  ///< same | noisy | idx | video
  std::filesystem::path generalize_images;
  std::filesystem::path generalize_labels;
  std::uint64_t generalize_seed = 3;

  bool metrics_wallclock = true;
  bool metrics_json = false;
  bool save_checkpoint = false;

  std::vector<LayerConfig> layers;

  std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
  NoiseSpec effective_noise() const;

  /// Resolved `key = value` lines, in a fixed order; parse_config(to_text())
  /// reproduces the config.
  std::string to_text() const;
};

/// Throws ConfigError naming the line for malformed lines, unknown keys and bad values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Architecture after resolving layer parameters against the input shape.
struct Architecture {
  std::vector<LayerSpec> specs;
  std::vector<std::string> names;  ///< paper layer names in order, e.g. {"KF", "KOL", "fc", "fc"}
  std::string label() const;       ///< e.g. "KF+KOL"
};

/// Throws ConfigError for unknown layer types, missing parameters, and masks
/// whose input slices do not match the incoming layer.
Architecture build_architecture(const ExperimentConfig& cfg, const Shape& sample_shape,
                                std::size_t classes);

// --- metrics ------------------------------------------------------------------------

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string split;  ///< train | test | generalization
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t wallclock_ms = 0;
};

inline constexpr const char* kMetricsHeader = "step,epoch,split,loss,accuracy,wallclock_ms";

/// `# `-prefixed config echo, the header, then one line per record.
void write_metrics_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                       const std::vector<MetricsRecord>& records);
void write_metrics_json(const std::filesystem::path& path, const ExperimentConfig& cfg,
                        const std::vector<MetricsRecord>& records);

// --- training -----------------------------------------------------------------------

/// Samples [n, 1, ...] with labels in [0, classes).
struct Samples {
  Tensor<float> data;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(data.shape().begin() + 1, data.shape().end()); }
};

Samples to_samples(const ImageDataset& ds);
Samples to_samples(const VideoDataset& ds);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> class_accuracy;
  std::vector<std::size_t> class_count;
};

Evaluation evaluate(Network<float>& net, const Samples& samples, std::size_t batch = 500);

struct EvalSet {
  std::string split;
  const Samples* samples = nullptr;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  /// Evaluation of each eval set at the end of each epoch (or at max_steps), [epoch][set].
  std::vector<std::vector<Evaluation>> epoch_end;
  /// Evaluation at each step listed in eval_at, [i][set].
  std::vector<std::vector<Evaluation>> at_steps;
};

/// Mini-batch Adam on softmax cross-entropy. Throws NumericError on a
/// non-finite loss.
TrainResult train_network(Network<float>& net, const ExperimentConfig& cfg, const Samples& train,
                          std::span<const EvalSet> evals);

// --- runners ------------------------------------------------------------------------

struct RunResult {
  std::filesystem::path metrics_path;
  std::string architecture;
  TrainResult train;
};

/// Train and test splits for the config's image source (MNIST from data_dir).
std::pair<ImageDataset, ImageDataset> load_image_splits(const ExperimentConfig& cfg);

RunResult run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

RunResult run_noise_experiment(const ExperimentConfig& cfg, const NoiseSpec& spec,
                               NoiseDirection direction, const std::filesystem::path& out_dir);

/// One run per entry and direction; writes `<out>/sweep.csv` with columns
/// family,value,direction,epoch,train_loss,test_accuracy.
std::filesystem::path run_sweep(const ExperimentConfig& cfg, std::span<const SweepEntry> entries,
                                const std::filesystem::path& out_dir);

RunResult run_generalization(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Also writes `<out>/per_class.csv`.
RunResult run_video(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Filter images of the first fixed-filter or convolution layer of `net`
/// and, when `sample` is given, its activation maps on that single sample.
std::vector<std::filesystem::path> dump_network(Network<float>& net, const Tensor<float>* sample,
                                                const std::filesystem::path& out_dir);

/// Max relative error between analytic and central-difference gradients of the
/// mean loss over every parameter of a float64 network.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

GradCheckReport gradient_check(Network<double>& net, const Tensor<double>& input,
                               std::span<const int> labels, double step = 1e-5);

} // namespace tcnn
