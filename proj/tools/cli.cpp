#include "cgl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>

#include "cgl/dataset.hpp"
#include "cgl/kernels.hpp"
#include "cgl/metrics.hpp"
#include "cgl/model.hpp"
#include "cgl/report.hpp"
#include "cgl/trainer.hpp"

namespace cgl::cli {
namespace {

struct Parser {
  CLI::App app{"Covert geo-location detection: data synthesis, pseudo labels, training, "
               "evaluation and overlays.",
               "cgl"};
  CliInvocation inv;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  bool verbose = false, quiet = false;

  CLI::App* synth = nullptr;
  CLI::App* pgt = nullptr;
  CLI::App* train = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* infer = nullptr;
  CLI::App* report = nullptr;
  CLI::Option* seed_opt[3] = {};
  CLI::Option* epochs_opt = nullptr;

  Parser() {
    app.require_subcommand(1);
    app.fallthrough();
    auto* v = app.add_flag("-v,--verbose", verbose, "Print per-step and per-image detail");
    auto* q = app.add_flag("-q,--quiet", quiet, "Print errors only");
    v->excludes(q);

    synth = app.add_subcommand("synth", "Generate a synthetic dataset with depth");
    synth->add_option("--out", inv.out, "Output directory")->required();
    synth->add_option("--count", inv.count, "Number of scenes")->check(CLI::PositiveNumber);
    synth->add_option("--families", inv.families, "Number of location families")
        ->check(CLI::PositiveNumber);
    synth->add_option("--size", inv.size, "Image side in pixels (multiple of 4)")
        ->check(CLI::PositiveNumber);
    seed_opt[0] = synth->add_option("--seed", seed, "Generator seed");

    pgt = app.add_subcommand("pgt", "Write pseudo-label masks for a dataset");
    pgt->add_option("--data", inv.data, "annotations.json")->required();
    pgt->add_option("--out", inv.out, "Output directory")->required();
    pgt->add_option("--config", inv.config, "Training config (pgt.* keys)");

    train = app.add_subcommand("train", "Train a model");
    train->add_option("--data", inv.data, "annotations.json")->required();
    train->add_option("--out", inv.out, "Run directory")->required();
    train->add_option("--config", inv.config, "Training config");
    train->add_option("--resume", inv.resume, "Training state (last.cglm) to continue from");
    seed_opt[1] = train->add_option("--seed", seed, "Seed for weights, shuffling and split");
    epochs_opt = train->add_option("--epochs", epochs, "Override the number of epochs")
                     ->check(CLI::PositiveNumber);

    eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval->add_option("--model", inv.model, "Checkpoint")->required();
    eval->add_option("--data", inv.data, "annotations.json")->required();
    eval->add_option("--config", inv.config, "Training config (split keys)");
    eval->add_option("--split", inv.split, "train, test or all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    eval->add_option("--out", inv.out, "Metrics CSV");
    eval->add_option("--per-image", inv.per_image, "Per-image metrics CSV");
    seed_opt[2] = eval->add_option("--seed", seed, "Split seed");

    infer = app.add_subcommand("infer", "Predict CGL regions on one image");
    infer->add_option("--model", inv.model, "Checkpoint")->required();
    infer->add_option("--image", inv.inputs, "Input PNG")->required()->expected(1);
    infer->add_option("--out", inv.out, "Overlay PNG")->required();
    infer->add_option("--mask", inv.mask_out, "Raw mask PNG (default: <out>_mask.png)");

    report = app.add_subcommand("report", "Plot training histories and tabulate runs");
    report->add_option("--history", inv.inputs, "history.csv files")->required()->expected(1, -1);
    report->add_option("--label", inv.labels, "Run labels, one per history");
    report->add_option("--out", inv.out, "Output directory")->required();
  }
};

std::string usage_text(const std::string& what, Parser& p) {
  return what + "\n" + p.app.help();
}

}  // namespace

CliInvocation parse_invocation(const std::vector<std::string>& args) {
  Parser p;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    p.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CliInvocation help;
    help.subcommand = "help";
    help.help_text = p.app.help();
    return help;
  } catch (const CLI::ParseError& e) {
    throw UsageError(usage_text(e.what(), p));
  }
  for (auto* sub : {p.synth, p.pgt, p.train, p.eval, p.infer, p.report}) {
    if (sub->parsed()) p.inv.subcommand = sub->get_name();
  }
  for (auto* o : p.seed_opt)
    if (o->count() > 0) p.inv.seed = p.seed;
  if (p.epochs_opt->count() > 0) p.inv.epochs = p.epochs;
  p.inv.verbosity = p.quiet ? 0 : (p.verbose ? 2 : 1);
  if (p.inv.subcommand == "synth" && p.inv.size % 4 != 0) {
    throw UsageError(usage_text("--size must be a multiple of 4", p));
  }
  if (p.inv.subcommand == "report" && !p.inv.labels.empty() &&
      p.inv.labels.size() != p.inv.inputs.size()) {
    throw UsageError(usage_text("--label must be given once per --history", p));
  }
  return p.inv;
}

namespace {

class Context {
 public:
  Context(const CliInvocation& inv, std::ostream& out, std::ostream& err)
      : inv(inv), out(out), err(err) {}

  const CliInvocation& inv;
  std::ostream& out;
  std::ostream& err;

  std::ostream& info() { return inv.verbosity >= 1 ? out : null_; }
  std::ostream& detail() { return inv.verbosity >= 2 ? out : null_; }

 private:
  std::ostream null_{nullptr};
};

void require_file(const std::filesystem::path& p, const char* what) {
  if (p.empty()) return;
  if (!std::filesystem::is_regular_file(p)) {
    throw IoError(std::string(what) + " not found: " + p.string());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* env = std::getenv("CGL_SEED");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("CGL_SEED is not an integer: ") + env);
  return v;
}

std::optional<std::uint64_t> resolve_seed(const CliInvocation& inv) {
  return inv.seed ? inv.seed : env_seed();
}

TrainConfig config_for(const CliInvocation& inv) {
  TrainConfig cfg = inv.config.empty() ? TrainConfig{} : load_train_config(inv.config);
  if (const auto s = resolve_seed(inv)) {
    cfg.seed = *s;
    cfg.encoder.seed = *s;
  }
  if (inv.epochs) cfg.epochs = *inv.epochs;
  cfg.validate();
  return cfg;
}

std::ofstream create(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  return io::open_for_write(p);
}

CocoDataset load_dataset(Context& ctx, bool with_depth) {
  auto ds = load_coco_annotations(ctx.inv.data, CocoLoadOptions{with_depth});
  for (const auto& w : ds.warnings) ctx.err << "warning: " << w << '\n';
  if (ds.scenes.empty()) throw DatasetError(ctx.inv.data.string() + ": no images");
  return ds;
}

// --- synth ------------------------------------------------------------------

int cmd_synth(Context& ctx) {
  SyntheticDatasetOptions o;
  o.count = ctx.inv.count;
  o.families = ctx.inv.families;
  o.height = o.width = ctx.inv.size;
  if (const auto s = resolve_seed(ctx.inv)) o.seed = *s;
  const auto scenes = generate_synthetic_dataset(o);
  write_coco_dataset(ctx.inv.out, scenes);
  std::size_t boxes = 0;
  for (const auto& s : scenes) boxes += s.boxes.size();
  ctx.info() << "wrote " << scenes.size() << " scenes (" << boxes << " boxes) to "
             << (ctx.inv.out / "annotations.json").string() << '\n';
  return kExitOk;
}

// --- pgt --------------------------------------------------------------------

int cmd_pgt(Context& ctx) {
  const TrainConfig cfg = config_for(ctx.inv);
  const auto ds = load_dataset(ctx, true);
  const auto samples = prepare_samples(ds.scenes, cfg.pgt);
  std::filesystem::create_directories(ctx.inv.out);
  std::size_t ones = 0, cells = 0;
  for (const auto& s : samples) {
    write_png_mask(ctx.inv.out / (s.name + ".png"), s.y_dflb);
    ones += s.y_dflb.count_ones();
    cells += s.y_dflb.values.size();
    ctx.detail() << s.name << ": " << s.y_dflb.count_ones() << " pseudo-label cells\n";
  }
  ctx.info() << "wrote " << samples.size() << " pseudo-label masks to " << ctx.inv.out.string()
             << " (" << std::fixed << std::setprecision(1)
             << (cells ? 100.0 * static_cast<double>(ones) / static_cast<double>(cells) : 0.0)
             << "% positive; " << cfg.pgt.key() << ")\n"
             << std::defaultfloat;
  return kExitOk;
}

// --- train ------------------------------------------------------------------

template <typename Real>
int train_with(Context& ctx, const TrainConfig& cfg, const DatasetSplit& split,
               const std::vector<TrainingSample>& samples) {
  const auto& dir = ctx.inv.out;
  CglModel<Real> model(cfg.encoder);
  Trainer<Real> trainer(model, cfg);
  if (!ctx.inv.resume.empty()) {
    trainer.load_state(ctx.inv.resume);
    ctx.info() << "resumed after epoch " << trainer.epochs_done() << '\n';
  }
  ctx.info() << "training on " << samples.size() << " scenes, testing on " << split.test.size()
             << ", " << model.parameter_count() << " parameters, kernels "
             << kernels::isa_name(kernels::active_isa()) << '\n';

  const auto history = trainer.fit(samples, split.test, [&](const EpochRecord& r) {
    trainer.save_state(dir / "last.cglm");
    ctx.info() << "epoch " << r.epoch << "  loss " << std::setprecision(4) << r.losses.total
               << "  (cgl " << r.losses.l_cgl << ", dflb " << r.losses.l_dflb << ", gte "
               << r.losses.l_gte << ", ivr " << r.losses.l_ivr << ")  mIoU " << r.miou
               << "  CGL IoU " << r.cgl_iou << '\n'
               << std::setprecision(6);
  });
  save_checkpoint(model, dir / "model.cglm");
  {
    auto os = create(dir / "history.csv");
    write_history_csv(os, history, cfg.weights);
  }
  std::vector<NamedReport> rows;
  rows.push_back({"train", evaluate(model, split.train).overall});
  if (!split.test.empty()) rows.push_back({"test", evaluate(model, split.test).overall});
  {
    auto os = create(dir / "metrics.csv");
    write_metrics_csv(os, rows);
  }
  if (ctx.inv.verbosity >= 1) write_metrics_table(ctx.out, rows);
  ctx.info() << "wrote " << (dir / "model.cglm").string() << '\n';
  return kExitOk;
}

int cmd_train(Context& ctx) {
  require_file(ctx.inv.resume, "resume state");
  const TrainConfig cfg = config_for(ctx.inv);
  const auto ds = load_dataset(ctx, true);
  const auto split = split_dataset(ds.scenes, cfg.split_mode, cfg.split_ratio, cfg.seed);
  if (split.train.empty()) throw DatasetError("training split is empty");
  std::filesystem::create_directories(ctx.inv.out);
  {
    auto os = create(ctx.inv.out / "config.cfg");
    write_train_config(os, cfg);
  }
  const PgtCache cache(ctx.inv.out / "pgt_cache");
  const auto samples = prepare_samples(split.train, cfg.pgt, &cache);
  return cfg.precision == Precision::f64 ? train_with<double>(ctx, cfg, split, samples)
                                         : train_with<float>(ctx, cfg, split, samples);
}

// --- eval -------------------------------------------------------------------

bool stored_as_double(const Checkpoint& ckpt) {
  return !ckpt.records.empty() && ckpt.records.front().element_size == 8;
}

template <typename Real>
int eval_with(Context& ctx, const Checkpoint& ckpt, const std::vector<AnnotatedScene>& scenes) {
  auto model = model_from_checkpoint<Real>(ckpt);
  const auto ev = evaluate(model, scenes);
  const std::vector<NamedReport> rows = {{ctx.inv.split, ev.overall}};
  if (ctx.inv.verbosity >= 1) write_metrics_table(ctx.out, rows);
  if (!ctx.inv.out.empty()) {
    auto os = create(ctx.inv.out);
    write_metrics_csv(os, rows);
  }
  if (!ctx.inv.per_image.empty()) {
    std::vector<NamedReport> per;
    for (const auto& r : ev.per_image) per.push_back({r.name, r.report});
    auto os = create(ctx.inv.per_image);
    write_metrics_csv(os, per);
  }
  for (const auto& r : ev.per_image) {
    ctx.detail() << r.name << ": CGL IoU " << r.report.iou_cgl << ", mIoU " << r.report.miou
                 << '\n';
  }
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  require_file(ctx.inv.model, "checkpoint");
  const TrainConfig cfg = config_for(ctx.inv);
  const Checkpoint ckpt = read_checkpoint(ctx.inv.model);
  const auto ds = load_dataset(ctx, false);
  std::vector<AnnotatedScene> scenes;
  if (ctx.inv.split == "all") {
    scenes = ds.scenes;
  } else {
    auto split = split_dataset(ds.scenes, cfg.split_mode, cfg.split_ratio, cfg.seed);
    scenes = ctx.inv.split == "train" ? std::move(split.train) : std::move(split.test);
  }
  if (scenes.empty()) throw DatasetError("the " + ctx.inv.split + " split is empty");
  return stored_as_double(ckpt) ? eval_with<double>(ctx, ckpt, scenes)
                                : eval_with<float>(ctx, ckpt, scenes);
}

// --- infer ------------------------------------------------------------------

template <typename Real>
LabelMask predict(const Checkpoint& ckpt, const RgbImage& image) {
  auto model = model_from_checkpoint<Real>(ckpt);
  return argmax_masks(model.infer(image_to_tensor<Real>(image))).front();
}

int cmd_infer(Context& ctx) {
  require_file(ctx.inv.model, "checkpoint");
  require_file(ctx.inv.inputs.front(), "image");
  const Checkpoint ckpt = read_checkpoint(ctx.inv.model);
  const RgbImage image = read_png_rgb(ctx.inv.inputs.front());
  const LabelMask mask =
      stored_as_double(ckpt) ? predict<double>(ckpt, image) : predict<float>(ckpt, image);
  const BinaryMask full = upsample_nearest(mask, image.height / mask.height);
  auto mask_path = ctx.inv.mask_out;
  if (mask_path.empty()) {
    mask_path = ctx.inv.out.parent_path() / (ctx.inv.out.stem().string() + "_mask.png");
  }
  if (ctx.inv.out.has_parent_path()) std::filesystem::create_directories(ctx.inv.out.parent_path());
  if (mask_path.has_parent_path()) std::filesystem::create_directories(mask_path.parent_path());
  write_png_rgb(ctx.inv.out, render_overlay(image, full));
  write_png_mask(mask_path, full);
  ctx.info() << mask.count_ones() << " of " << mask.values.size()
             << " cells predicted CGL; wrote " << ctx.inv.out.string() << " and "
             << mask_path.string() << '\n';
  return kExitOk;
}

// --- report -----------------------------------------------------------------

int cmd_report(Context& ctx) {
  std::vector<NamedHistory> runs;
  for (std::size_t i = 0; i < ctx.inv.inputs.size(); ++i) {
    const auto& p = ctx.inv.inputs[i];
    require_file(p, "history");
    std::string label;
    if (!ctx.inv.labels.empty()) {
      label = ctx.inv.labels[i];
    } else {
      label = p.stem().string();
      if (label == "history" && p.has_parent_path()) label = p.parent_path().filename().string();
    }
    runs.push_back({label, read_history_csv(p)});
    if (runs.back().history.epochs.empty()) throw FormatError(p.string() + ": no epochs");
  }
  const auto& dir = ctx.inv.out;
  std::filesystem::create_directories(dir);
  {
    auto os = create(dir / "losses.svg");
    write_loss_plot_svg(os, runs);
  }
  {
    auto os = create(dir / "iou.svg");
    write_iou_plot_svg(os, runs);
  }
  ctx.info() << "wrote " << (dir / "losses.svg").string() << " and " << (dir / "iou.svg").string()
             << '\n';
  if (runs.size() >= 2) {
    const auto rows = ablation_rows(runs);
    {
      auto os = create(dir / "ablation.md");
      write_ablation_markdown(os, rows);
    }
    {
      auto os = create(dir / "ablation.csv");
      write_ablation_csv(os, rows);
    }
    if (ctx.inv.verbosity >= 1) write_ablation_markdown(ctx.out, rows);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliInvocation inv;
  try {
    inv = parse_invocation(args);
  } catch (const UsageError& e) {
    err << e.what();
    return kExitUsage;
  }
  if (inv.subcommand == "help") {
    out << inv.help_text;
    return kExitOk;
  }
  Context ctx(inv, out, err);
  try {
    require_file(inv.config, "config file");
    require_file(inv.data, "annotation file");
    if (inv.subcommand == "synth") return cmd_synth(ctx);
    if (inv.subcommand == "pgt") return cmd_pgt(ctx);
    if (inv.subcommand == "train") return cmd_train(ctx);
    if (inv.subcommand == "eval") return cmd_eval(ctx);
    if (inv.subcommand == "infer") return cmd_infer(ctx);
    if (inv.subcommand == "report") return cmd_report(ctx);
    err << "unknown subcommand " << inv.subcommand << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cgl::cli
