#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "tcnn/checkpoint.hpp"
#include "tcnn/experiment.hpp"
#include "tcnn/topo_graph.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--data", c.data, "dataset directory (default: $TCNN_DATA_DIR)");
}

tcnn::ExperimentConfig resolve(const Common& c) {
  tcnn::ExperimentConfig cfg = tcnn::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.data.empty()) {
    cfg.data_dir = c.data;
  } else if (cfg.data_dir.empty()) {
    if (const char* env = std::getenv("TCNN_DATA_DIR")) cfg.data_dir = env;
  }
  return cfg;
}

void report(const tcnn::RunResult& run) {
  std::printf("architecture: %s\n", run.architecture.c_str());
  for (std::size_t e = 0; e < run.train.epoch_end.size(); ++e)
    for (const tcnn::Evaluation& ev : run.train.epoch_end[e])
      std::printf("epoch %zu: loss %.4f accuracy %.4f\n", e + 1, ev.loss, ev.accuracy);
  std::printf("metrics: %s\n", run.metrics_path.string().c_str());
}

std::vector<tcnn::Submanifold> parse_tags(const std::vector<std::string>& names) {
  std::vector<tcnn::Submanifold> tags;
  for (const std::string& n : names) tags.push_back(tcnn::parse_submanifold(n));
  if (tags.empty()) tags.assign(std::begin(tcnn::kAllSubmanifolds), std::end(tcnn::kAllSubmanifolds));
  return tags;
}

int dump_config_layers(const tcnn::ExperimentConfig& cfg, const std::filesystem::path& out) {
  const tcnn::Shape shape = cfg.data_source == "video"
                                ? tcnn::Shape{1, cfg.video_frames, cfg.video_size, cfg.video_size}
                                : tcnn::Shape{1, cfg.resize ? cfg.resize : 28, cfg.resize ? cfg.resize : 28};
  const std::size_t classes = cfg.data_source == "video" ? cfg.video_classes.size() : 10;
  const tcnn::Architecture arch = tcnn::build_architecture(cfg, shape, classes);
  std::size_t n = 0;
  for (std::size_t i = 0; i < arch.specs.size(); ++i) {
    const tcnn::LayerSpec& s = arch.specs[i];
    const std::string prefix = "layer" + std::to_string(i) + "_" + s.label;
    if (s.bank) n += tcnn::dump_bank(*s.bank, out, prefix).size();
    if (s.mask) {
      tcnn::write_mask_csv(*s.mask, out / (prefix + "_mask.csv"));
      tcnn::write_mask_json(*s.mask, out / (prefix + "_mask.json"));
      std::printf("%s mask: density %.4f\n", s.label.c_str(), tcnn::mask_density(*s.mask));
      n += 2;
    }
  }
  std::printf("wrote %zu files to %s\n", n, out.string().c_str());
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topological convolutional networks: training and analysis"};
  app.require_subcommand(1);

  Common train_opts, noise_opts, sweep_opts, gen_opts, video_opts, dump_opts, grad_opts;
  auto* train = app.add_subcommand("train", "train a network and record metrics");
  add_common(train, train_opts, true);

  auto* noise = app.add_subcommand("noise", "train with class-correlated noise on one side");
  add_common(noise, noise_opts, true);
  std::string direction;
  noise->add_option("--direction", direction, "noisy-train or noisy-test (default: config)")
      ->check(CLI::IsMember({"noisy-train", "noisy-test"}));

  auto* sweep = app.add_subcommand("sweep", "noise experiments over the tau and omega families");
  add_common(sweep, sweep_opts, true);

  auto* gen = app.add_subcommand("generalize", "train on one dataset and evaluate on another");
  add_common(gen, gen_opts, true);

  auto* video = app.add_subcommand("video", "train on synthetic moving-patch videos");
  add_common(video, video_opts, true);

  auto* dump = app.add_subcommand("dump-filters", "write filter banks, masks or trained filters");
  add_common(dump, dump_opts, false);
  std::string bank_kind, checkpoint;
  std::size_t bank_n = 16, bank_n1 = 4, bank_n2 = 4, kernel = 3, sample_index = 0;
  std::vector<std::string> tag_names;
  dump->add_option("--bank", bank_kind, "CF, KF, MF or Gabor")->check(CLI::IsMember({"CF", "KF", "MF", "Gabor"}));
  dump->add_option("--n", bank_n, "CF filter count")->capture_default_str();
  dump->add_option("--n1", bank_n1, "theta1 steps (KF, MF)")->capture_default_str();
  dump->add_option("--n2", bank_n2, "theta2 steps (KF, MF)")->capture_default_str();
  dump->add_option("--kernel", kernel, "kernel size")->capture_default_str();
  dump->add_option("--tags", tag_names, "MF submanifolds (default: all five)");
  dump->add_option("--checkpoint", checkpoint, "trained network (needs --config)");
  dump->add_option("--sample", sample_index, "test sample for activation maps")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all gradients in float64");
  add_common(grad, grad_opts, false);
  double tolerance = 1e-4, fd_step = 1e-5;
  std::size_t grid = 8;
  grad->add_option("--tolerance", tolerance, "max relative error")->capture_default_str();
  grad->add_option("--step", fd_step, "central-difference step")->capture_default_str();
  grad->add_option("--grid", grid, "input height and width")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (train->parsed()) {
      const auto cfg = resolve(train_opts);
      report(tcnn::run_train(cfg, train_opts.out));
    } else if (noise->parsed()) {
      auto cfg = resolve(noise_opts);
      if (!direction.empty())
        cfg.noise_direction = direction == "noisy-train" ? tcnn::NoiseDirection::noisy_train
                                                         : tcnn::NoiseDirection::noisy_test;
      report(tcnn::run_noise_experiment(cfg, cfg.effective_noise(), cfg.noise_direction, noise_opts.out));
    } else if (sweep->parsed()) {
      const auto cfg = resolve(sweep_opts);
      const auto entries = tcnn::sweep_specs(cfg.sweep_taus, cfg.sweep_omegas, cfg.effective_noise().seed);
      std::printf("sweep: %s\n", tcnn::run_sweep(cfg, entries, sweep_opts.out).string().c_str());
    } else if (gen->parsed()) {
      report(tcnn::run_generalization(resolve(gen_opts), gen_opts.out));
    } else if (video->parsed()) {
      report(tcnn::run_video(resolve(video_opts), video_opts.out));
    } else if (dump->parsed()) {
      const std::filesystem::path out = dump_opts.out;
      if (!bank_kind.empty()) {
        tcnn::FilterBank bank;
        if (bank_kind == "CF") bank = tcnn::make_cf_bank(bank_n, kernel);
        else if (bank_kind == "KF") bank = tcnn::make_kf_bank(bank_n1, bank_n2, kernel);
        else if (bank_kind == "MF") bank = tcnn::make_mf_bank(parse_tags(tag_names), bank_n1, bank_n2, kernel);
        else bank = tcnn::make_gabor_bank(tcnn::reference_gabor_family(), kernel);
        const auto files = tcnn::dump_bank(bank, out, bank_kind);
        std::printf("wrote %zu files to %s\n", files.size(), out.string().c_str());
        return kOk;
      }
      if (dump_opts.config.empty()) throw tcnn::ConfigError("dump-filters needs --bank or --config");
      const auto cfg = resolve(dump_opts);
      if (checkpoint.empty()) return dump_config_layers(cfg, out);
      tcnn::Samples test;
      if (cfg.data_source == "video") {
        test = tcnn::to_samples(tcnn::make_synthetic_videos(cfg.video_classes, cfg.video_per_class,
                                                            cfg.video_frames, cfg.video_size,
                                                            cfg.video_size, cfg.video_test_seed));
      } else {
        test = tcnn::to_samples(tcnn::load_image_splits(cfg).second);
      }
      if (sample_index >= test.size()) throw tcnn::ConfigError("--sample is out of range");
      const tcnn::Architecture arch = tcnn::build_architecture(cfg, test.sample_shape(), test.classes);
      auto net = tcnn::build_network<float>(arch.specs, test.sample_shape(), cfg.seed);
      tcnn::load_checkpoint(net, checkpoint);
      tcnn::Shape one = test.data.shape();
      one[0] = 1;
      const std::size_t plane = test.data.size() / test.size();
      tcnn::Tensor<float> x(one, std::vector<float>(test.data.data() + sample_index * plane,
                                                    test.data.data() + (sample_index + 1) * plane));
      const auto files = tcnn::dump_network(net, &x, out);
      std::printf("wrote %zu files to %s\n", files.size(), out.string().c_str());
    } else if (grad->parsed()) {
      tcnn::ExperimentConfig cfg;
      if (!grad_opts.config.empty()) {
        cfg = resolve(grad_opts);
      } else {
        cfg = tcnn::parse_config(
            "layer.1.type = NOL\nlayer.1.slices = 4\nlayer.2.type = NOL\nlayer.2.slices = 4\n"
            "layer.3.type = fc\n");
        if (grad_opts.seed) cfg.seed = *grad_opts.seed;
      }
      const bool video_cfg = cfg.data_source == "video";
      const tcnn::Shape shape = video_cfg ? tcnn::Shape{1, grid, grid, grid} : tcnn::Shape{1, grid, grid};
      const std::size_t classes = video_cfg ? cfg.video_classes.size() : 10;
      const std::size_t batch = 2;
      const tcnn::Architecture arch = tcnn::build_architecture(cfg, shape, classes);
      auto net = tcnn::build_network<double>(arch.specs, shape, cfg.seed);
      tcnn::Shape bshape{batch};
      bshape.insert(bshape.end(), shape.begin(), shape.end());
      tcnn::Tensor<double> x(bshape);
      std::mt19937_64 rng(cfg.seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0), small(-0.1, 0.1);
      for (double& v : x.values()) v = u(rng);
      // Nonzero biases keep pre-activations off the ReLU kink.
      for (tcnn::Parameter<double>* p : net.parameters())
        if (p->value.rank() == 1)
          for (double& v : p->value.values()) v = small(rng);
      std::vector<int> labels;
      for (std::size_t i = 0; i < batch; ++i) labels.push_back(static_cast<int>(i % classes));
      const tcnn::GradCheckReport r = tcnn::gradient_check(net, x, labels, fd_step);
      std::printf("architecture: %s\nchecked %zu weights, max relative error %.3e at %s\n",
                  arch.label().c_str(), r.checked, r.max_rel_error, r.worst_parameter.c_str());
      if (!(r.max_rel_error < tolerance)) {
        std::fprintf(stderr, "gradient check failed: %.3e >= %.3e\n", r.max_rel_error, tolerance);
        return kNumeric;
      }
    }
  } catch (const tcnn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const tcnn::ConstructionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const tcnn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const tcnn::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
