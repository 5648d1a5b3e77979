#pragma once

// `dualswin` command-line front end. Exit codes: 0 success, 1 runtime
// failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dualswin/ablation.hpp"
#include "dualswin/bench.hpp"
#include "dualswin/evaluate.hpp"
#include "dualswin/render.hpp"
#include "dualswin/train.hpp"

namespace dualswin::cli {

namespace fs = std::filesystem;

/// Bad or missing command-line input; reported with exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string config_path;
  std::string data_root;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool synthetic = false;
  std::optional<int> count;
  std::string suite = "all";
  bool deterministic = false;
  // command-specific
  bool resume = false;
  std::optional<int> epochs;
  std::string checkpoint;
  std::string train_split = "config";
  std::string eval_split = "test";
  std::string image, gt, pred, prob;
  double sigma = 5.0;
  int iters = 100, warmup = 10;
};

/// An explicit --data wins over a config that asks for synthetic data.
inline void apply_data_flags(Config& c, const Options& o) {
  if (!o.data_root.empty()) {
    c.data.dataset_root = o.data_root;
    c.data.synthetic = false;
  }
  if (o.synthetic) c.data.synthetic = true;
  if (o.count) c.data.synthetic_count = *o.count;
}

inline Config resolve_config(const Options& o) {
  Config c = o.config_path.empty() ? Config{} : load_config(o.config_path);
  if (o.seed) c.train.seed = *o.seed;
  if (o.epochs) c.train.epochs = *o.epochs;
  apply_data_flags(c, o);
  validate(c);
  return c;
}

/// Synthetic phantoms when requested, otherwise the dataset under the root.
inline std::vector<Sample> load_samples(const Config& c, std::ostream& log) {
  const auto size = static_cast<std::size_t>(c.model.img_size);
  if (c.data.synthetic) {
    if (c.data.synthetic_count < 1) throw UsageError("--count must be at least 1");
    return synth_generate(static_cast<std::size_t>(c.data.synthetic_count), size, c.train.seed);
  }
  if (c.data.dataset_root.empty()) throw UsageError("no dataset: pass --data ROOT or --synthetic");
  return load_dataset(c.data.dataset_root, size, &log);
}

/// `config` uses the configured fractions; `all` trains on every sample.
inline DatasetSplit make_split(const Config& c, std::size_t n, const std::string& mode) {
  if (mode == "all") {
    DatasetSplit s;
    for (std::size_t i = 0; i < n; ++i) s.train.push_back(i);
    return s;
  }
  return split_indices(n, c.data.split_fractions, c.train.seed);
}

inline void write_split_csv(const fs::path& path, const std::vector<Sample>& samples, const DatasetSplit& s) {
  std::ofstream os(path);
  os << "id,split\n";
  for (const auto& [name, idx] : {std::pair{"train", &s.train}, {"val", &s.val}, {"test", &s.test}})
    for (auto i : *idx) os << samples[i].id << ',' << name << '\n';
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

/// `--out` names a file when it has an image extension, otherwise a directory.
inline fs::path output_file(const Options& o, const std::string& default_name) {
  const fs::path p(o.out);
  if (is_image_file(p)) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }
  fs::create_directories(p);
  return p / default_name;
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const Config c = resolve_config(o);
  const auto samples = load_samples(c, err);
  const DatasetSplit split = make_split(c, samples.size(), o.train_split);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "config.cfg", serialize_config(c));
  write_split_csv(fs::path(o.out) / "split.csv", samples, split);
  out << kHistoryHeader << '\n';
  FitOptions fo{o.out};
  fo.resume = o.resume;
  fo.log = &out;
  const FitResult r = Trainer<float>(c).fit(samples, split, fo);
  err << "trained " << r.history.size() << " epoch(s); best epoch " << r.best_epoch << "\n";
  return 0;
}

inline Checkpoint require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint PATH is required");
  return load_checkpoint(o.checkpoint);
}

/// Config embedded in a checkpoint, with data flags from the command line.
inline Config checkpoint_config(const Checkpoint& ck, const Options& o) {
  Config c = parse_config(ck.config_text);
  if (o.seed) c.train.seed = *o.seed;
  apply_data_flags(c, o);
  if (!o.config_path.empty()) {
    const Config given = load_config(o.config_path);
    if (given.model != c.model) throw CheckpointError("--config model section does not match the checkpoint");
  }
  return c;
}

inline std::vector<std::size_t> select_split(const DatasetSplit& s, std::size_t n, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  if (name == "all") {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
  }
  throw UsageError("--split must be train, val, test or all");
}

/// Reads `<dir>/<id>.png` probability or mask images as predictions.
inline std::vector<SamplePrediction> read_predictions(const fs::path& dir, const std::vector<const Sample*>& chosen) {
  std::vector<SamplePrediction> preds;
  for (const Sample* s : chosen) {
    SamplePrediction p;
    for (const char* sub : {"masks_thyroid", "masks_ptmc"}) {
      const fs::path f = find_counterpart(dir / sub, s->id);
      if (f.empty()) {
        if (std::string(sub) == "masks_thyroid") continue;
        throw DataError("no prediction for " + s->id + " under " + (dir / sub).string());
      }
      const Image8 img = resize_nearest(read_gray(f).pixels, s->image.height, s->image.width);
      const auto top = *std::max_element(img.data.begin(), img.data.end());
      Grid<float> g(img.height, img.width);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = top > 1 ? img.data[i] / 255.0f : img.data[i];
      (std::string(sub) == "masks_ptmc" ? p.ptmc : p.thyroid) = std::move(g);
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> ck;
  Config c;
  if (o.pred.empty()) {
    ck = require_checkpoint(o);
    c = checkpoint_config(*ck, o);
  } else {
    c = resolve_config(o);
  }
  const auto samples = load_samples(c, err);
  const DatasetSplit split = make_split(c, samples.size(), o.eval_split == "all" ? "all" : "config");
  const auto idx = select_split(split, samples.size(), o.eval_split);
  if (idx.empty()) throw DataError("the '" + o.eval_split + "' split is empty; nothing to evaluate");
  std::vector<const Sample*> chosen;
  for (auto i : idx) chosen.push_back(&samples[i]);
  std::vector<SamplePrediction> preds;
  if (ck) {
    const auto model = model_from_checkpoint<float>(*ck);
    preds = predict(model, chosen, static_cast<std::size_t>(c.train.batch_size));
  } else {
    preds = read_predictions(o.pred, chosen);
  }
  const Evaluation ev = evaluate_predictions(chosen, preds, c.train.threshold);
  write_evaluation(o.out, ev);
  write_metrics_header(out);
  if (ev.thyroid) write_metrics_row(out, ev.thyroid->report);
  write_metrics_row(out, ev.ptmc.report);
  return 0;
}

inline int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
  const Config c = resolve_config(o);
  const auto variants = ablation_variants(c, o.suite);
  const auto samples = load_samples(c, err);
  const DatasetSplit split = make_split(c, samples.size(), "config");
  const auto rows = run_ablation(variants, samples, split, o.out, &err);
  write_ablation_header(out);
  bool failed = false;
  for (const auto& r : rows) {
    write_ablation_row(out, r);
    failed |= !r.ok;
  }
  return failed ? 1 : 0;
}

inline int cmd_bench(const Options& o, std::ostream& out, std::ostream&) {
  if (o.iters < 1 || o.warmup < 0) throw UsageError("--iters must be >= 1 and --warmup >= 0");
  Config c;
  std::optional<DualSwinUnet<float>> model;
  std::string label;
  if (!o.checkpoint.empty()) {
    model.emplace(model_from_checkpoint<float>(load_checkpoint(o.checkpoint), &c));
    label = o.checkpoint;
  } else {
    c = resolve_config(o);
    model.emplace(c.model, mix_seed(c.train.seed, 0x1417));
    label = o.config_path.empty() ? "built-in defaults (untrained weights)" : o.config_path + " (untrained weights)";
  }
  const BenchReport r = benchmark_forward(*model, o.iters, o.warmup, c.train.seed, label);
  fs::create_directories(o.out);
  std::ofstream report(fs::path(o.out) / "bench.csv"), samples(fs::path(o.out) / "bench_samples.csv");
  write_bench_report(report, r);
  write_bench_samples(samples, r);
  write_bench_report(out, r);
  return 0;
}

inline int cmd_synth(const Options& o, std::ostream& out, std::ostream&) {
  Config c = o.config_path.empty() ? Config{} : load_config(o.config_path);
  if (o.seed) c.train.seed = *o.seed;
  const int count = o.count.value_or(c.data.synthetic_count);
  if (count < 1) throw UsageError("--count must be at least 1");
  std::vector<PhantomGeometry> geometry;
  const auto samples = synth_generate(static_cast<std::size_t>(count), static_cast<std::size_t>(c.model.img_size),
                                      c.train.seed, SynthParams{}, &geometry);
  write_dataset(o.out, samples);
  std::ofstream manifest(fs::path(o.out) / "manifest.csv");
  write_manifest(manifest, geometry);
  out << "wrote " << samples.size() << " samples to " << o.out << '\n';
  return 0;
}

/// Probability maps of one image at the model's input size.
inline SamplePrediction predict_image(const Checkpoint& ck, const Image8& image, Image8* resized) {
  Config c;
  const auto model = model_from_checkpoint<float>(ck, &c);
  const auto size = static_cast<std::size_t>(c.model.img_size);
  Sample s;
  s.id = "input";
  *resized = resize_nearest(image, size, size);
  s.image = resize_bilinear(to_unit(image), size, size);
  s.thyroid = s.ptmc = Image8(size, size);
  return predict(model, {&s}).front();
}

inline Image8 require_image(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " PATH is required");
  return read_gray(path).pixels;
}

inline int cmd_overlay(const Options& o, std::ostream& out, std::ostream&) {
  Image8 image = require_image(o.image, "--image");
  Image8 gt = binarize(require_image(o.gt, "--gt"));
  Image8 pred;
  if (!o.pred.empty()) {
    pred = binarize(read_gray(o.pred).pixels);
  } else if (!o.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    Image8 resized;
    const SamplePrediction p = predict_image(ck, image, &resized);
    pred = threshold_map(p.ptmc, parse_config(ck.config_text).train.threshold);
    gt = resize_nearest(gt, pred.height, pred.width);
    image = resized;
  } else {
    throw UsageError("overlay needs --pred MASK or --checkpoint PATH");
  }
  const Image8 rgb = render_overlay(gt, pred, image);
  const fs::path file = output_file(o, "overlay.png");
  write_png(file, rgb);
  const auto n = count_overlay_colours(rgb);
  out << "wrote " << file.string() << " (white " << n.white << ", pink " << n.pink << ", green " << n.green << ")\n";
  return 0;
}

inline int cmd_heatmap(const Options& o, std::ostream& out, std::ostream& err) {
  if (!(o.sigma > 0)) throw UsageError("--sigma must be > 0");
  Image8 image = require_image(o.image, "--image");
  Grid<double> prob;
  const auto to_prob = [](const Grid<float>& g) {
    Grid<double> d(g.height, g.width);
    for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] = g.data[i];
    return d;
  };
  if (!o.prob.empty()) {
    prob = to_prob(to_unit(read_gray(o.prob).pixels));
  } else if (!o.checkpoint.empty()) {
    Image8 resized;
    prob = to_prob(predict_image(load_checkpoint(o.checkpoint), image, &resized).ptmc);
    image = resized;
  } else {
    throw UsageError("heatmap needs --prob IMAGE or --checkpoint PATH");
  }
  const Heatmap h = render_heatmap(prob, o.sigma, image);
  if (!h.note.empty()) err << "note: " << h.note << '\n';
  const fs::path file = output_file(o, "heatmap.png");
  write_png(file, h.rgb);
  out << "wrote " << file.string() << '\n';
  return 0;
}

inline int cmd_print_config(const Options& o, std::ostream& out, std::ostream&) {
  out << serialize_config(resolve_config(o));
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dual-decoder Swin-Unet for thyroid and PTMC segmentation", "dualswin"};
  app.require_subcommand(1, 1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Config file (key = value)")->check(CLI::ExistingFile);
    sub->add_option("--data", o.data_root, "Dataset root with images/, masks_thyroid/, masks_ptmc/");
    sub->add_option("--out", o.out, "Output directory (or .png file for renderers)");
    sub->add_option("--seed", o.seed, "Override train.seed");
    sub->add_flag("--synthetic", o.synthetic, "Use generated phantoms instead of --data");
    sub->add_option("--count", o.count, "Number of synthetic samples")->check(CLI::NonNegativeNumber);
    sub->add_flag("--deterministic", o.deterministic,
                  "Require bitwise-reproducible runs (always the case: single-threaded, seeded)");
  };

  std::vector<std::pair<CLI::App*, int (*)(const Options&, std::ostream&, std::ostream&)>> commands;
  const auto add = [&](const char* name, const char* help, auto fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    commands.emplace_back(sub, fn);
    return sub;
  };

  auto* train = add("train", "Train a model and write checkpoints and history.csv", cmd_train);
  train->add_flag("--resume", o.resume, "Continue from <out>/checkpoint_last.bin");
  train->add_option("--epochs", o.epochs, "Override train.epochs")->check(CLI::PositiveNumber);
  train->add_option("--split", o.train_split, "config: use split_fractions; all: train on every sample")
      ->check(CLI::IsMember({"config", "all"}));

  auto* eval = add("eval", "Evaluate a checkpoint (or prediction masks) on a split", cmd_eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  eval->add_option("--pred", o.pred, "Directory of predicted masks_thyroid/ and masks_ptmc/ instead of a model")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--split", o.eval_split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* ablate = add("ablate", "Train and score ablation variants", cmd_ablate);
  ablate->add_option("--suite", o.suite, "skips, fusion, decoder or all")
      ->check(CLI::IsMember({"skips", "fusion", "decoder", "all"}));
  ablate->add_option("--epochs", o.epochs, "Override train.epochs")->check(CLI::PositiveNumber);

  auto* bench = add("bench", "Time single-image forward passes", cmd_bench);
  bench->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default: untrained weights)")
      ->check(CLI::ExistingFile);
  bench->add_option("--iters", o.iters, "Timed iterations")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", o.warmup, "Untimed warmup iterations")->check(CLI::NonNegativeNumber);

  add("synth", "Write a synthetic dataset", cmd_synth);

  auto* overlay = add("overlay", "Colour true positives white, false negatives pink, false positives green", cmd_overlay);
  overlay->add_option("--image", o.image, "Grayscale image")->check(CLI::ExistingFile);
  overlay->add_option("--gt", o.gt, "Ground-truth mask")->check(CLI::ExistingFile);
  overlay->add_option("--pred", o.pred, "Predicted mask")->check(CLI::ExistingFile);
  overlay->add_option("--checkpoint", o.checkpoint, "Predict the mask with this checkpoint")->check(CLI::ExistingFile);

  auto* heatmap = add("heatmap", "Blurred PTMC probability heatmap over the image", cmd_heatmap);
  heatmap->add_option("--image", o.image, "Grayscale image")->check(CLI::ExistingFile);
  heatmap->add_option("--prob", o.prob, "Probability map image (0-255)")->check(CLI::ExistingFile);
  heatmap->add_option("--checkpoint", o.checkpoint, "Predict probabilities with this checkpoint")
      ->check(CLI::ExistingFile);
  heatmap->add_option("--sigma", o.sigma, "Gaussian sigma in pixels")->default_val(5.0);

  add("print-config", "Print the resolved config", cmd_print_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) out << sub->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    app.exit(e, out, err);
    return 2;
  }

  try {
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) return fn(o, out, err);
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dualswin::cli
