// hvit: synth, preprocess, split, train, eval, heatmap, permtest.
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric degeneracy.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dataset_io.hpp"
#include "hvit/config.hpp"
#include "hvit/factorization.hpp"
#include "hvit/rng.hpp"

namespace fs = std::filesystem;
using namespace hvit;
using namespace hvit::tools;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("HVIT_OUT_DIR");
  return env ? env : ".";
}

Geometry parse_geometry(const std::string& spec) {
  Geometry geo;
  char c1 = 0, c2 = 0;
  std::istringstream ls(spec);
  if (!(ls >> geo.region_size >> c1 >> geo.patch_size >> c2 >> geo.minipatch_size) || c1 != ',' ||
      c2 != ',') {
    throw std::runtime_error("bad --geometry '" + spec + "', expected region,patch,minipatch");
  }
  geo.validate();
  return geo;
}

std::vector<double> parse_gamma_list(const std::string& spec) {
  std::vector<double> out;
  std::istringstream ls(spec);
  std::string item;
  while (std::getline(ls, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::runtime_error("empty --sweep list");
  return out;
}

std::string format_gamma(double gamma) {
  std::ostringstream os;
  os << gamma;
  return os.str();
}

struct SynthArgs {
  std::size_t count = 16;
  std::uint64_t seed = 1;
  std::string out_dir = default_out_dir();
  std::string geometry = "64,16,4";
  std::size_t regions_x = 2, regions_y = 2;
  std::string label_dist = "uniform";
  double spacing = 0.5;
};

int cmd_synth(const SynthArgs& args) {
  const Geometry geo = parse_geometry(args.geometry);
  fs::create_directories(args.out_dir);
  SynthOptions opts;
  opts.regions_x = args.regions_x;
  opts.regions_y = args.regions_y;
  opts.spacing = args.spacing;

  // Grade marginals: balanced by default, or skewed toward the low grades
  // the way biopsy cohorts usually are.
  const double panda_weights[6] = {0.27, 0.26, 0.12, 0.12, 0.11, 0.12};
  Rng grade_rng(mix_seed(args.seed, 0x677261646551ull));
  std::vector<LabelRow> rows;
  for (std::size_t i = 0; i < args.count; ++i) {
    int grade = 0;
    if (args.label_dist == "uniform") {
      grade = static_cast<int>(i % 6);
    } else if (args.label_dist == "panda") {
      double u = grade_rng.uniform();
      for (grade = 0; grade < 5; ++grade) {
        if (u < panda_weights[grade]) break;
        u -= panda_weights[grade];
      }
    } else {
      throw std::runtime_error("unknown --label-dist '" + args.label_dist + "' (have: uniform, panda)");
    }
    SynthSlide slide = synth_slide(mix_seed(args.seed, i), grade, geo, opts);
    std::ostringstream id;
    id << "slide_" << std::setw(4) << std::setfill('0') << i;
    const std::string file = id.str() + ".ppm";
    write_slide((fs::path(args.out_dir) / file).string(), slide.raster);
    rows.push_back(LabelRow{id.str(), grade, file, "synthetic"});
  }
  write_labels((fs::path(args.out_dir) / "labels.txt").string(), rows);
  std::cout << "wrote " << args.count << " slides and labels.txt to " << args.out_dir << "\n";
  return 0;
}

struct PreprocessArgs {
  std::string slide;
  std::string labels;
  std::string out_dir = default_out_dir();
  std::string geometry = "64,16,4";
  double sat_threshold = 20.0 / 255.0;
  std::size_t median_kernel = 7;
  std::size_t min_hole_area = 64;
  double min_tissue = 0.10;
  double target_spacing = 0.5;
};

void preprocess_one(const std::string& slide_path, const std::string& id, const Geometry& geo,
                    const PreprocessArgs& args) {
  SlideRaster slide = read_slide(slide_path);
  if (std::abs(slide.spacing - args.target_spacing) > 0.05 * args.target_spacing) {
    slide = rescale_to_spacing(slide, args.target_spacing);
  }
  SegmentationParams params;
  params.sat_threshold = args.sat_threshold;
  params.median_kernel = args.median_kernel;
  params.min_hole_area = args.min_hole_area;
  const TissueMask mask = segment_tissue(slide, params);
  const RegionSet set = extract_regions(slide, mask, geo, args.min_tissue);
  const fs::path dir = fs::path(args.out_dir) / id;
  write_region_set(dir.string(), set);
  write_ppm((dir / "mask.ppm").string(), mask_to_image(mask));
  std::cout << id << ": " << set.regions.size() << " regions\n";
}

int cmd_preprocess(const PreprocessArgs& args) {
  const Geometry geo = parse_geometry(args.geometry);
  if (args.slide.empty() == args.labels.empty()) {
    throw std::runtime_error("pass exactly one of --slide or --labels");
  }
  if (!args.slide.empty()) {
    preprocess_one(args.slide, fs::path(args.slide).stem().string(), geo, args);
    return 0;
  }
  const auto rows = read_labels(args.labels);
  const fs::path base = fs::path(args.labels).parent_path();
  for (const LabelRow& row : rows) {
    preprocess_one((base / row.path).string(), row.id, geo, args);
  }
  return 0;
}

struct SplitArgs {
  std::string labels;
  std::size_t k = 5;
  std::uint64_t seed = 1;
  std::string out = "folds.txt";
};

int cmd_split(const SplitArgs& args) {
  const auto rows = read_labels(args.labels);
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (const LabelRow& row : rows) labels.push_back(row.grade);
  const FoldSplit split = stratified_kfold(labels, args.k, args.seed);
  write_folds(args.out, rows, split, args.k, args.seed);
  std::cout << "wrote " << args.k << " folds for " << rows.size() << " slides to " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string labels;
  std::string data_dir;
  std::string folds;
  std::size_t fold = 0;
  std::string scheme;
  std::string frozen_checkpoint;
  std::string out = "model.hvt";
  std::string metrics = "metrics.txt";
  // flag overrides; negative/zero means "keep config value"
  long long epochs = -1;
  double lr = -1.0;
  double momentum = -1.0;
  long long batch = -1;
  long long seed = -1;
  bool cache = false;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : read_run_config(args.config);
  if (!args.scheme.empty()) cfg.model.scheme = scheme_from_name(args.scheme);
  if (args.epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(args.epochs);
  if (args.lr >= 0.0) cfg.train.lr = args.lr;
  if (args.momentum >= 0.0) cfg.train.momentum = args.momentum;
  if (args.batch >= 0) cfg.train.batch_size = static_cast<std::size_t>(args.batch);
  if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
  if (args.cache) cfg.train.cache_frozen = true;

  const auto rows = read_labels(args.labels);
  const Dataset data = load_dataset(rows, args.data_dir);
  const FoldSplit split = read_folds(args.folds, rows);
  if (args.fold >= split.folds.size()) {
    throw std::runtime_error("--fold " + std::to_string(args.fold) + " out of range (folds file has " +
                             std::to_string(split.folds.size()) + ")");
  }

  HViTModel model = init_model(cfg.model, cfg.train.seed);
  if (!args.frozen_checkpoint.empty()) load_frozen(model, args.frozen_checkpoint);
  const TrainLog log = train(model, data, split, args.fold, cfg.train);
  save_model(model, args.out);

  KvPairs metrics;
  const auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  metrics.emplace_back("scheme", model.scheme.name());
  metrics.emplace_back("fold", std::to_string(args.fold));
  metrics.emplace_back("seed", std::to_string(cfg.train.seed));
  metrics.emplace_back("epochs", std::to_string(cfg.train.epochs));
  for (std::size_t e = 0; e < log.tune_qwk.size(); ++e) {
    metrics.emplace_back("epoch_" + std::to_string(e) + ".train_loss", num(log.train_loss[e]));
    metrics.emplace_back("epoch_" + std::to_string(e) + ".qwk", num(log.tune_qwk[e]));
  }
  metrics.emplace_back("qwk", num(log.tune_qwk.back()));
  write_kv_file(args.metrics, metrics);
  std::cout << "fold " << args.fold << " " << model.scheme.name() << " qwk " << log.tune_qwk.back()
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string labels;
  std::string data_dir;
  std::vector<std::string> checkpoints;
  std::string subset;
  bool ensemble = false;
  std::string out = "predictions.txt";
  std::string report;
};

int cmd_eval(const EvalArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : read_run_config(args.config);
  auto rows = read_labels(args.labels);
  if (!args.subset.empty()) {
    std::ifstream in(args.subset);
    if (!in) throw std::runtime_error("cannot open subset file: " + args.subset);
    std::vector<std::string> keep;
    std::string id;
    while (in >> id) keep.push_back(id);
    std::vector<LabelRow> filtered;
    for (const LabelRow& row : rows) {
      if (std::find(keep.begin(), keep.end(), row.id) != keep.end()) filtered.push_back(row);
    }
    if (filtered.empty()) throw std::runtime_error("subset matches no labeled slide");
    rows = std::move(filtered);
  }
  const Dataset data = load_dataset(rows, args.data_dir);

  if (args.checkpoints.empty()) throw std::runtime_error("pass at least one --checkpoint");
  if (args.checkpoints.size() > 1 && !args.ensemble) {
    throw std::runtime_error("multiple checkpoints need --ensemble");
  }
  std::vector<HViTModel> models;
  for (const std::string& path : args.checkpoints) {
    HViTModel model = init_model(cfg.model, 0);
    load_model(model, path);
    models.push_back(std::move(model));
  }

  std::vector<Prediction> preds;
  if (models.size() == 1 && !args.ensemble) {
    std::vector<std::size_t> all(data.entries.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    preds = evaluate(models[0], data, all).predictions;
  } else {
    preds = ensemble_predict(models, data);
  }
  write_predictions(args.out, preds);

  std::vector<int> labels, classes;
  for (const Prediction& p : preds) {
    labels.push_back(p.label);
    classes.push_back(p.predicted);
  }
  const double score = qwk(labels, classes);
  if (!args.report.empty()) {
    KvPairs report;
    std::ostringstream os;
    os.precision(17);
    os << score;
    report.emplace_back("qwk", os.str());
    report.emplace_back("count", std::to_string(preds.size()));
    report.emplace_back("models", std::to_string(models.size()));
    write_kv_file(args.report, report);
  }
  std::cout << "qwk = " << score << "\n";
  return 0;
}

struct HeatmapArgs {
  std::string config;
  std::string checkpoint;
  std::string slide;
  std::string out_dir = default_out_dir();
  double gamma = 0.7;
  std::string sweep;
  std::string level = "factorized";
  std::string blend_levels = "patch,region,slide";
  double alpha = 0.6;
  std::string colormap = "jet";
  bool no_level_norm = false;
  bool export_field = false;
  double sat_threshold = 20.0 / 255.0;
  std::size_t median_kernel = 7;
  std::size_t min_hole_area = 64;
  double min_tissue = 0.10;
};

int cmd_heatmap(const HeatmapArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : read_run_config(args.config);
  HViTModel model = init_model(cfg.model, 0);
  if (!args.checkpoint.empty()) load_model(model, args.checkpoint);

  const SlideRaster slide = read_slide(args.slide);
  SegmentationParams params;
  params.sat_threshold = args.sat_threshold;
  params.median_kernel = args.median_kernel;
  params.min_hole_area = args.min_hole_area;
  const TissueMask mask = segment_tissue(slide, params);
  const RegionSet set = extract_regions(slide, mask, cfg.model.geometry, args.min_tissue);
  if (set.regions.empty()) throw std::runtime_error("no regions pass --min-tissue on " + args.slide);

  const SlideOutput out = forward_slide(model, region_tensors(set));
  const Colormap cmap = colormap_from_name(args.colormap);
  fs::create_directories(args.out_dir);
  const std::string stem = fs::path(args.slide).stem().string();

  const auto level_field = [&](Level level) {
    PixelField field = assemble_level_field(out.bundle, level, set);
    return args.no_level_norm ? field : normalize_level(field);
  };
  const auto emit = [&](const PixelField& field, const std::string& name) {
    const fs::path img_path = fs::path(args.out_dir) / (stem + "_" + name + ".ppm");
    write_ppm(img_path.string(), render_heatmap(field, slide.image, cmap, args.alpha));
    if (args.export_field) {
      write_field((fs::path(args.out_dir) / (stem + "_" + name + ".hvt")).string(), field);
    }
    std::cout << img_path.string() << "\n";
  };

  if (args.level != "factorized") {
    emit(level_field(level_from_name(args.level)), args.level);
    return 0;
  }

  std::vector<PixelField> fields;
  std::istringstream ls(args.blend_levels);
  std::string item;
  while (std::getline(ls, item, ',')) {
    if (!item.empty()) fields.push_back(level_field(level_from_name(item)));
  }
  if (fields.empty()) throw std::runtime_error("empty --blend-levels list");

  const std::vector<double> gammas =
      args.sweep.empty() ? std::vector<double>{args.gamma} : parse_gamma_list(args.sweep);
  const std::vector<PixelField> blended = gamma_sweep(fields, gammas);
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    emit(blended[i], "factorized_gamma" + format_gamma(gammas[i]));
  }
  return 0;
}

struct PermtestArgs {
  std::string labels;
  std::string preds_a;
  std::string preds_b;
  std::size_t iters = 9999;
  std::uint64_t seed = 1;
};

int cmd_permtest(const PermtestArgs& args) {
  const auto rows = read_labels(args.labels);
  const auto a = read_predictions(args.preds_a);
  const auto b = read_predictions(args.preds_b);
  std::map<std::string, int> a_of, b_of;
  for (const PredRow& r : a) a_of[r.id] = r.predicted;
  for (const PredRow& r : b) b_of[r.id] = r.predicted;
  std::vector<int> labels, pa, pb;
  for (const LabelRow& row : rows) {
    auto ia = a_of.find(row.id);
    auto ib = b_of.find(row.id);
    if (ia == a_of.end() || ib == b_of.end()) {
      throw std::runtime_error("slide '" + row.id + "' missing from a predictions file");
    }
    labels.push_back(row.grade);
    pa.push_back(ia->second);
    pb.push_back(ib->second);
  }
  const double qa = qwk(labels, pa);
  const double qb = qwk(labels, pb);
  const double p = permutation_test(labels, pa, pb, args.iters, args.seed);
  std::cout << "qwk_a = " << qa << "\n";
  std::cout << "qwk_b = " << qb << "\n";
  std::cout << "p = " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical attention toolkit for gigapixel grading"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate labeled synthetic slides");
  synth->add_option("--count", synth_args.count, "number of slides");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--out-dir", synth_args.out_dir, "output directory (or $HVIT_OUT_DIR)");
  synth->add_option("--geometry", synth_args.geometry, "region,patch,minipatch sizes in px");
  synth->add_option("--slide-regions-x", synth_args.regions_x, "slide width in regions");
  synth->add_option("--slide-regions-y", synth_args.regions_y, "slide height in regions");
  synth->add_option("--label-dist", synth_args.label_dist, "uniform | panda");
  synth->add_option("--spacing", synth_args.spacing, "microns per pixel");

  PreprocessArgs pre_args;
  auto* pre = app.add_subcommand("preprocess", "segment tissue and extract regions");
  pre->add_option("--slide", pre_args.slide, "one slide (P6)");
  pre->add_option("--labels", pre_args.labels, "labels manifest naming many slides");
  pre->add_option("--out-dir", pre_args.out_dir, "output directory (or $HVIT_OUT_DIR)");
  pre->add_option("--geometry", pre_args.geometry, "region,patch,minipatch sizes in px");
  pre->add_option("--sat-threshold", pre_args.sat_threshold, "saturation cut in [0,1]");
  pre->add_option("--median-kernel", pre_args.median_kernel, "odd smoothing window");
  pre->add_option("--min-hole-area", pre_args.min_hole_area, "fill holes below this area");
  pre->add_option("--min-tissue", pre_args.min_tissue, "drop regions below this tissue fraction");
  pre->add_option("--spacing", pre_args.target_spacing, "target microns per pixel");

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "stratified cross-validation folds");
  split->add_option("--labels", split_args.labels, "labels manifest")->required();
  split->add_option("--k", split_args.k, "fold count");
  split->add_option("--seed", split_args.seed, "shuffle seed");
  split->add_option("--out", split_args.out, "folds file");

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "finetune under a freeze scheme");
  tr->add_option("--config", train_args.config, "model/train config file");
  tr->add_option("--labels", train_args.labels, "labels manifest")->required();
  tr->add_option("--data-dir", train_args.data_dir, "preprocess output root")->required();
  tr->add_option("--folds", train_args.folds, "folds file")->required();
  tr->add_option("--fold", train_args.fold, "held-out fold id");
  tr->add_option("--scheme", train_args.scheme, "local | global");
  tr->add_option("--frozen", train_args.frozen_checkpoint, "checkpoint for frozen stages");
  tr->add_option("--out", train_args.out, "trained checkpoint path");
  tr->add_option("--metrics", train_args.metrics, "metrics report path");
  tr->add_option("--epochs", train_args.epochs, "override config");
  tr->add_option("--lr", train_args.lr, "override config");
  tr->add_option("--momentum", train_args.momentum, "override config");
  tr->add_option("--batch", train_args.batch, "slides per step");
  tr->add_option("--seed", train_args.seed, "init/train seed");
  tr->add_flag("--cache", train_args.cache, "memoize frozen-stage outputs");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "score slides with one model or an ensemble");
  ev->add_option("--config", eval_args.config, "model config file");
  ev->add_option("--labels", eval_args.labels, "labels manifest")->required();
  ev->add_option("--data-dir", eval_args.data_dir, "preprocess output root")->required();
  ev->add_option("--checkpoint", eval_args.checkpoints, "model checkpoint (repeatable)");
  ev->add_option("--subset", eval_args.subset, "file of slide ids to keep");
  ev->add_flag("--ensemble", eval_args.ensemble, "average continuous scores across checkpoints");
  ev->add_option("--out", eval_args.out, "predictions file");
  ev->add_option("--report", eval_args.report, "metrics report path");

  HeatmapArgs hm_args;
  auto* hm = app.add_subcommand("heatmap", "render per-level and factorized attention heatmaps");
  hm->add_option("--config", hm_args.config, "model config file");
  hm->add_option("--checkpoint", hm_args.checkpoint, "model checkpoint");
  hm->add_option("--slide", hm_args.slide, "slide (P6)")->required();
  hm->add_option("--out-dir", hm_args.out_dir, "output directory (or $HVIT_OUT_DIR)");
  hm->add_option("--gamma", hm_args.gamma, "finetuned/frozen balance in [0,1]");
  hm->add_option("--sweep", hm_args.sweep, "comma list of gammas, one panel each");
  hm->add_option("--level", hm_args.level, "patch | region | slide | factorized");
  hm->add_option("--blend-levels", hm_args.blend_levels, "levels entering the factorized blend");
  hm->add_option("--alpha", hm_args.alpha, "overlay opacity in [0,1]");
  hm->add_option("--colormap", hm_args.colormap, "jet | gray");
  hm->add_flag("--no-level-norm", hm_args.no_level_norm, "skip per-level min-max normalization");
  hm->add_flag("--export-field", hm_args.export_field, "also write fields in checkpoint format");
  hm->add_option("--sat-threshold", hm_args.sat_threshold, "saturation cut in [0,1]");
  hm->add_option("--median-kernel", hm_args.median_kernel, "odd smoothing window");
  hm->add_option("--min-hole-area", hm_args.min_hole_area, "fill holes below this area");
  hm->add_option("--min-tissue", hm_args.min_tissue, "drop regions below this tissue fraction");

  PermtestArgs perm_args;
  auto* pt = app.add_subcommand("permtest", "paired two-sided permutation test between prediction files");
  pt->add_option("--labels", perm_args.labels, "labels manifest")->required();
  pt->add_option("--preds-a", perm_args.preds_a, "predictions file A")->required();
  pt->add_option("--preds-b", perm_args.preds_b, "predictions file B")->required();
  pt->add_option("--iters", perm_args.iters, "permutation iterations");
  pt->add_option("--seed", perm_args.seed, "permutation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (pre->parsed()) return cmd_preprocess(pre_args);
    if (split->parsed()) return cmd_split(split_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (hm->parsed()) return cmd_heatmap(hm_args);
    if (pt->parsed()) return cmd_permtest(perm_args);
  } catch (const DegenerateBlendError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
