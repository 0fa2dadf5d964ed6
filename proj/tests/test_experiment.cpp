#include <doctest.h>

#include <cstdlib>
#include <limits>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "tcnn/checkpoint.hpp"
#include "tcnn/experiment.hpp"
#include "tcnn/topo_graph.hpp"

using namespace tcnn;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tcnn_test_experiment" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Class c lights column c of an 8x8 image, plus pixel noise.
ImageDataset striped(std::size_t n, std::uint64_t seed) {
  ImageDataset ds;
  ds.classes = 4;
  ds.images = Tensor<float>(Shape{n, 1, 8, 8});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 60);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 4);
    ds.labels.push_back(c);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const int v = x == static_cast<std::size_t>(2 * c) ? 255 : byte(rng);
        ds.images[(i * 8 + y) * 8 + x] = static_cast<float>(v) / 255.0f;
      }
  }
  return ds;
}

fs::path tiny_mnist() {
  static const fs::path dir = [] {
    const fs::path d = scratch("tiny_mnist");
    write_idx(striped(160, 1), d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte");
    write_idx(striped(40, 2), d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte");
    return d;
  }();
  return dir;
}

const char* kSmall =
    "name = smoke\n"
    "seed = 3\n"
    "lr = 0.01\n"
    "batch_size = 20\n"
    "epochs = 2\n"
    "eval.every = 4\n"
    "metrics.wallclock = false\n"
    "layer.1.type = NOL\n"
    "layer.1.slices = 4\n"
    "layer.2.type = fc\n";

std::string line_key(const std::string& line) {
  const auto eq = line.find('=');
  std::string key = line.substr(0, eq);
  while (!key.empty() && key.back() == ' ') key.pop_back();
  return key;
}

/// kSmall with the keys set in `extra` replaced.
ExperimentConfig small_config(const std::string& extra = "") {
  std::set<std::string> overridden;
  std::istringstream ex(extra);
  for (std::string line; std::getline(ex, line);) overridden.insert(line_key(line));
  std::string text;
  std::istringstream base(kSmall);
  for (std::string line; std::getline(base, line);)
    if (!overridden.count(line_key(line))) text += line + "\n";
  ExperimentConfig cfg = parse_config(text + extra);
  cfg.data_dir = tiny_mnist();
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string records_only(const std::string& csv) {
  const auto pos = csv.find(kMetricsHeader);
  return pos == std::string::npos ? "" : csv.substr(pos);
}

#ifdef TCNN_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(TCNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

} // namespace

TEST_SUITE("experiment-cli") {

TEST_CASE("config parsing") {
  const ExperimentConfig cfg = parse_config(
      "# comment\n"
      "name = paper\n"
      "seed = 7\n"
      "lr = 1e-4   # trailing comment\n"
      "eval.at = 10, 20\n"
      "data.subset = 10000\n"
      "noise.tau = 0.4\n"
      "noise.direction = noisy-test\n"
      "video.classes = K-static, S-trans+\n"
      "layer.1.type = KF\n"
      "layer.1.n1 = 8\n"
      "layer.1.n2 = 8\n"
      "layer.2.type = KOL\n"
      "layer.2.threshold = 1.5\n"
      "layer.3.type = fc\n"
      "layer.3.units = 512\n"
      "layer.4.type = fc\n");
  CHECK(cfg.name == "paper");
  CHECK(cfg.seed == 7);
  CHECK(cfg.lr == 1e-4);
  CHECK(cfg.eval_at == std::vector<std::size_t>{10, 20});
  CHECK(cfg.data_subset == 10000);
  CHECK(cfg.noise.tau == 0.4);
  CHECK(cfg.noise_direction == NoiseDirection::noisy_test);
  CHECK(cfg.video_classes.size() == 2);
  REQUIRE(cfg.layers.size() == 4);
  CHECK(cfg.layers[1].type == "KOL");
  CHECK(cfg.layers[1].params.at("threshold") == "1.5");
  CHECK(cfg.effective_noise().seed == 7);
  CHECK(cfg.batch_size == 100);
  CHECK(cfg.eval_every == 10);

  const ExperimentConfig again = parse_config(cfg.to_text());
  CHECK(again.to_text() == cfg.to_text());
  CHECK(again.layers.size() == 4);
}

TEST_CASE("config errors name the line") {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message("seed = 1\nbogus = 2\n").find("line 2") != std::string::npos);
  CHECK(message("seed = x\n").find("line 1") != std::string::npos);
  CHECK(message("seed = 1\nseed = 2\n").find("line 2") != std::string::npos);
  CHECK(message("just words\n").find("line 1") != std::string::npos);
  CHECK(message("layer.1.type = KF\nlayer.1.slices = 3\n").find("line 2") != std::string::npos);
  CHECK(message("layer.1.type = Fancy\n") != "");
  CHECK(message("noise.direction = sideways\n") != "");
  CHECK(message("data.source = cifar\n") != "");
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.cfg"), ConfigError);
}

TEST_CASE("architectures") {
  const ExperimentConfig kfkol = parse_config(
      "layer.1.type = KF\nlayer.2.type = KOL\nlayer.2.threshold = 1.5\nlayer.3.type = fc\n"
      "layer.3.units = 32\nlayer.4.type = fc\n");
  const Architecture a = build_architecture(kfkol, {1, 8, 8}, 10);
  CHECK(a.label() == "KF+KOL");
  CHECK(a.names == std::vector<std::string>{"KF", "KOL", "fc", "fc"});
  CHECK(a.specs.back().kind == LayerKind::softmax_xent);
  std::size_t relus = 0;
  for (const auto& s : a.specs) relus += s.kind == LayerKind::relu;
  CHECK(relus == 3);
  Network<float> net = build_network<float>(a.specs, {1, 8, 8}, 1);
  CHECK(net.output_shape() == Shape{10});

  const ExperimentConfig nol = parse_config("layer.1.type = NOL\nlayer.2.type = NOL\nlayer.3.type = fc\n");
  const Architecture b = build_architecture(nol, {1, 8, 8}, 10);
  CHECK(b.label() == "NOL+NOL");
  CHECK(b.specs[0].out_slices == 64);

  const ExperimentConfig cfcol = parse_config(
      "layer.1.type = CF\nlayer.1.slices = 16\nlayer.2.type = COL\nlayer.2.threshold = 0.7854\n"
      "layer.3.type = fc\n");
  const Architecture c = build_architecture(cfcol, {1, 8, 8}, 10);
  CHECK(c.label() == "CF+COL");
  REQUIRE(c.specs[2].mask);
  CHECK(c.specs[2].mask->row_count(0) == 5);

  const ExperimentConfig gabor = parse_config("layer.1.type = Gabor\nlayer.2.type = NOL\nlayer.3.type = fc\n");
  CHECK(build_architecture(gabor, {1, 8, 8}, 10).specs[0].bank->size() == 16);

  const ExperimentConfig video = parse_config(
      "data.source = video\nlayer.1.type = MF\nlayer.2.type = 6MKOL\nlayer.2.threshold = 3\n"
      "layer.3.type = pool\nlayer.4.type = fc\n");
  const Architecture v = build_architecture(video, {1, 9, 9, 9}, 5);
  CHECK(v.label() == "M-F+6MKOL");
  CHECK(v.specs[0].bank->size() == 20);
  Network<float> vnet = build_network<float>(v.specs, {1, 9, 9, 9}, 1);
  CHECK(vnet.output_shape() == Shape{5});

  const ExperimentConfig bad_first = parse_config("layer.1.type = NOL\nlayer.1.slices = 5\nlayer.2.type = KOL\n"
                                                  "layer.2.threshold = 1\nlayer.3.type = fc\n");
  CHECK_THROWS_AS(build_architecture(bad_first, {1, 8, 8}, 10), ConfigError);
  const ExperimentConfig no_threshold = parse_config("layer.1.type = KF\nlayer.2.type = KOL\nlayer.3.type = fc\n");
  CHECK_THROWS_AS(build_architecture(no_threshold, {1, 8, 8}, 10), ConfigError);
  const ExperimentConfig isolated = parse_config(
      "layer.1.type = CF\nlayer.1.slices = 8\nlayer.2.type = COL\nlayer.2.slices = 16\n"
      "layer.2.threshold = 0.01\nlayer.3.type = fc\n");
  CHECK_THROWS_AS(build_architecture(isolated, {1, 8, 8}, 10), ConfigError);
  const ExperimentConfig no_fc = parse_config("layer.1.type = NOL\n");
  CHECK_THROWS_AS(build_architecture(no_fc, {1, 8, 8}, 10), ConfigError);
  const ExperimentConfig wrong_units = parse_config("layer.1.type = NOL\nlayer.2.type = fc\nlayer.2.units = 3\n");
  CHECK_THROWS_AS(build_architecture(wrong_units, {1, 8, 8}, 10), ConfigError);
  CHECK_THROWS_AS(build_architecture(ExperimentConfig{}, {1, 8, 8}, 10), ConfigError);
}

TEST_CASE("metrics files") {
  ExperimentConfig cfg = small_config();
  const fs::path dir = scratch("metrics");
  const std::vector<MetricsRecord> recs = {{1, 1, "train", 0.5, 0.25, 3}, {1, 1, "test", 0.75, 0.5, 4}};
  write_metrics_csv(dir / "m.csv", cfg, recs);
  std::ifstream in(dir / "m.csv");
  std::string line;
  std::size_t comments = 0;
  while (std::getline(in, line) && line[0] == '#') ++comments;
  CHECK(comments > 10);
  CHECK(line == kMetricsHeader);
  std::getline(in, line);
  CHECK(line == "1,1,train,0.5,0.25,3");
  const std::string text = slurp(dir / "m.csv");
  CHECK(text.find("# seed = 3") != std::string::npos);
  CHECK(text.find("# layer.1.type = NOL") != std::string::npos);
  write_metrics_json(dir / "m.json", cfg, recs);
  CHECK(slurp(dir / "m.json").find("\"split\": \"test\"") != std::string::npos);
}

TEST_CASE("smoke training run") {
  ExperimentConfig cfg = small_config("metrics.json = true\nsave.checkpoint = true\n");
  const fs::path dir = scratch("smoke");
  const RunResult run = run_train(cfg, dir);
  CHECK(run.architecture == "NOL");
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "metrics.json"));
  CHECK(fs::exists(dir / "model.tcnn"));
  REQUIRE(run.train.epoch_end.size() == 2);
  // 200 images, 85% train = 170, batches of 20 -> 9 per epoch.
  std::size_t train_records = 0, test_records = 0;
  std::size_t last_step = 0;
  for (const auto& r : run.train.records) {
    if (r.split == "train") {
      ++train_records;
      CHECK(r.step > last_step);
      last_step = r.step;
    } else {
      ++test_records;
    }
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
  }
  CHECK(train_records == 18);
  CHECK(test_records == 6);
  CHECK(run.train.epoch_end.back()[0].accuracy > 0.9);

  const RunResult again = run_train(cfg, scratch("smoke2"));
  CHECK(slurp(dir / "metrics.csv") == slurp(again.metrics_path));

  const auto [train, test] = load_image_splits(cfg);
  const Samples te = to_samples(test);
  const Architecture arch = build_architecture(cfg, te.sample_shape(), te.classes);
  Network<float> net = build_network<float>(arch.specs, te.sample_shape(), 99);
  load_checkpoint(net, dir / "model.tcnn");
  CHECK(evaluate(net, te).accuracy == run.train.epoch_end.back()[0].accuracy);

  Tensor<float> one(Shape{1, 1, 8, 8});
  std::copy_n(te.data.data(), 64, one.data());
  const auto files = dump_network(net, &one, scratch("dump") / "fresh");
  std::size_t filters = 0, acts = 0;
  for (const auto& f : files) {
    CHECK(fs::exists(f));
    filters += f.filename().string().rfind("filter_", 0) == 0;
    acts += f.filename().string().rfind("activation_", 0) == 0;
  }
  CHECK(filters == 4);
  CHECK(acts > 0);
}

TEST_CASE("ten-image smoke config") {
  ExperimentConfig cfg = small_config("data.subset = 12\ndata.train_fraction = 0.84\n");
  const RunResult run = run_train(cfg, scratch("ten"));
  CHECK_FALSE(run.train.records.empty());
}

TEST_CASE("non-finite loss is a numeric error") {
  ExperimentConfig cfg = small_config();
  const auto [train, test] = load_image_splits(cfg);
  const Samples tr = to_samples(train);
  const Architecture arch = build_architecture(cfg, tr.sample_shape(), tr.classes);
  Network<float> net = build_network<float>(arch.specs, tr.sample_shape(), 1);
  net.parameters().back()->value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_network(net, cfg, tr, {}), NumericError);
}

TEST_CASE("noise experiment directions") {
  ExperimentConfig cfg = small_config("epochs = 1\n");
  const NoiseSpec zero{0.0, 0.0, 0.0, 5, false};
  const RunResult base = run_train(cfg, scratch("noise_base"));
  const RunResult a = run_noise_experiment(cfg, zero, NoiseDirection::noisy_train, scratch("noise_a"));
  const RunResult b = run_noise_experiment(cfg, zero, NoiseDirection::noisy_test, scratch("noise_b"));
  const std::string want = records_only(slurp(base.metrics_path));
  CHECK(records_only(slurp(a.metrics_path)) == want);
  CHECK(records_only(slurp(b.metrics_path)) == want);
  CHECK(slurp(a.metrics_path).find("# noise.direction = noisy-train") != std::string::npos);

  const NoiseSpec loud{0.6, 0.04, 0.04, 5, false};
  const RunResult c = run_noise_experiment(cfg, loud, NoiseDirection::noisy_test, scratch("noise_c"));
  CHECK(records_only(slurp(c.metrics_path)) != want);
}

TEST_CASE("sweep aggregates") {
  ExperimentConfig cfg = small_config("epochs = 1\nsweep.report_epochs = 1, 2\nsweep.directions = noisy-train\n");
  const double taus[] = {0.2};
  const auto entries = sweep_specs(taus, {}, 5);
  const fs::path dir = scratch("sweep");
  const fs::path csv = run_sweep(cfg, entries, dir);
  std::ifstream in(csv);
  std::string header, row1, row2, extra;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "family,value,direction,epoch,train_loss,test_accuracy");
  CHECK(row1.rfind("tau,0.20000000000000001,noisy-train,1,", 0) == 0);
  CHECK(row2.rfind("tau,0.20000000000000001,noisy-train,2,", 0) == 0);
  CHECK_FALSE(std::getline(in, extra));

  ExperimentConfig two = cfg;
  two.epochs = 2;
  const RunResult single = run_noise_experiment(two, entries[0].spec, NoiseDirection::noisy_train, scratch("sweep_single"));
  const fs::path sub = dir / "tau_0.20000000000000001_noisy-train" / "metrics.csv";
  REQUIRE(fs::exists(sub));
  CHECK(records_only(slurp(sub)) == records_only(slurp(single.metrics_path)));
}

TEST_CASE("generalization") {
  ExperimentConfig cfg = small_config("epochs = 1\ngeneralize.target = same\n");
  const RunResult same = run_generalization(cfg, scratch("gen_same"));
  std::vector<double> test, gen;
  for (const auto& r : same.train.records) {
    if (r.split == "test") test.push_back(r.accuracy);
    if (r.split == "generalization") gen.push_back(r.accuracy);
  }
  CHECK_FALSE(test.empty());
  CHECK(test == gen);

  const fs::path other = scratch("gen_other");
  ImageDataset big = striped(24, 9);
  big = resize_bilinear(big, 12, 12);
  write_idx(big, other / "img", other / "lab");
  ExperimentConfig idx = small_config("epochs = 1\ngeneralize.target = idx\n");
  idx.generalize_images = other / "img";
  idx.generalize_labels = other / "lab";
  const RunResult r = run_generalization(idx, scratch("gen_idx"));
  CHECK(r.train.epoch_end.back().size() == 2);

  ExperimentConfig noisy = small_config("epochs = 1\n");
  CHECK(run_generalization(noisy, scratch("gen_noisy")).train.epoch_end.back().size() == 2);
}

TEST_CASE("video runs") {
  const char* base =
      "data.source = video\nvideo.per_class = 6\nvideo.frames = 5\nvideo.size = 5\n"
      "batch_size = 10\nepochs = 1\nlr = 0.01\nmetrics.wallclock = false\n";
  ExperimentConfig mf = parse_config(std::string(base) + "layer.1.type = MF\nlayer.1.n1 = 1\nlayer.1.n2 = 2\n"
                                     "layer.2.type = fc\n");
  const fs::path dir = scratch("video_mf");
  const RunResult run = run_video(mf, dir);
  CHECK(run.architecture == "M-F");
  const std::string per_class = slurp(dir / "per_class.csv");
  CHECK(per_class.rfind("class,tag,count,accuracy\n0,K-static,6,", 0) == 0);
  CHECK(per_class.find("\nall,all,30,") != std::string::npos);

  ExperimentConfig c3 = parse_config(std::string(base) + "layer.1.type = conv3d\nlayer.1.slices = 4\nlayer.2.type = fc\n");
  CHECK(run_video(c3, scratch("video_c3")).architecture == "conv3d");

  ExperimentConfig one = parse_config(std::string(base) + "video.classes = S-rot+\nlayer.1.type = MF\n"
                                      "layer.1.n1 = 1\nlayer.1.n2 = 1\nlayer.2.type = fc\n");
  CHECK(run_video(one, scratch("video_one")).train.epoch_end.back()[0].accuracy == 1.0);

  ExperimentConfig gen = mf;
  CHECK(run_generalization(gen, scratch("video_gen")).train.epoch_end.back().size() == 2);
  CHECK_THROWS_AS(run_video(small_config(), scratch("video_bad")), ConfigError);
}

TEST_CASE("missing data is a data error") {
  ExperimentConfig cfg = parse_config(kSmall);
  CHECK_THROWS_AS(run_train(cfg, scratch("nodata")), DataError);
  cfg.data_dir = "/nonexistent/mnist";
  CHECK_THROWS_AS(run_train(cfg, scratch("nodata")), DataError);
}

#ifdef TCNN_CLI_PATH
TEST_CASE("CLI verbs and exit codes") {
  const fs::path dir = scratch("cli");
  {
    std::ofstream(dir / "ok.cfg") << kSmall;
    std::ofstream(dir / "bad.cfg") << "seed = 1\nnot_a_key = 3\n";
    std::ofstream(dir / "arch.cfg") << "layer.1.type = KF\nlayer.2.type = KOL\nlayer.2.threshold = 1.5\nlayer.3.type = fc\n";
  }
  const std::string data = " --data " + tiny_mnist().string();
  CHECK(run_cli("train --config " + (dir / "ok.cfg").string() + " --out " + (dir / "run").string() + data) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(run_cli("train --config " + (dir / "ok.cfg").string() + " --seed 11 --out " + (dir / "run11").string() + data) == 0);
  CHECK(slurp(dir / "run11" / "metrics.csv").find("# seed = 11") != std::string::npos);
  CHECK(run_cli("noise --direction noisy-test --config " + (dir / "ok.cfg").string() + " --out " + (dir / "noise").string() + data) == 0);
  CHECK(run_cli("train --config " + (dir / "bad.cfg").string() + data) == 2);
  CHECK(run_cli("train --config " + (dir / "ok.cfg").string() + " --data /nonexistent/dir --out " + (dir / "x").string()) == 3);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("train") == 2);
  CHECK(run_cli("gradcheck") == 0);
  CHECK(run_cli("gradcheck --tolerance 0") == 4);
  CHECK(run_cli("dump-filters --bank KF --out " + (dir / "kf").string()) == 0);
  CHECK(fs::exists(dir / "kf" / "KF_015.pgm"));
  CHECK(run_cli("dump-filters --bank CF --n 16 --out " + (dir / "cf").string()) == 0);
  CHECK(fs::exists(dir / "cf" / "CF_015.pgm"));
  CHECK(run_cli("dump-filters --config " + (dir / "arch.cfg").string() + " --out " + (dir / "arch").string()) == 0);
  CHECK(fs::exists(dir / "arch" / "layer2_KOL_mask.json"));

  const std::string saved = "save.checkpoint = true\n";
  std::ofstream(dir / "ckpt.cfg") << kSmall << saved;
  CHECK(run_cli("train --config " + (dir / "ckpt.cfg").string() + " --out " + (dir / "ckpt").string() + data) == 0);
  CHECK(run_cli("dump-filters --config " + (dir / "ckpt.cfg").string() + " --checkpoint " +
                (dir / "ckpt" / "model.tcnn").string() + " --out " + (dir / "trained").string() + data) == 0);
  CHECK(fs::exists(dir / "trained" / "filters.csv"));

  setenv("TCNN_DATA_DIR", tiny_mnist().c_str(), 1);
  CHECK(run_cli("train --config " + (dir / "ok.cfg").string() + " --out " + (dir / "env").string()) == 0);
  unsetenv("TCNN_DATA_DIR");
}
#endif

}
