// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <type_traits>

#include "cgl/cli.hpp"
#include "cgl/losses.hpp"
#include "cgl/metrics.hpp"
#include "cgl/trainer.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

namespace {

namespace fs = std::filesystem;
using cgl::testing::TensorD;
using cgl::testing::random_tensor;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cgl_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// --- gradients --------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  auto checks = cgl::testing::op_gradient_suite();
  const auto losses = cgl::testing::loss_gradient_suite();
  checks.insert(checks.end(), losses.begin(), losses.end());
  const double elapsed = seconds_since(t0);
  Outcome o{true, {}};
  double worst = 0.0;
  std::size_t min_probes = SIZE_MAX;
  std::string failing;
  for (const auto& c : checks) {
    worst = std::max(worst, c.check.max_rel_error);
    min_probes = std::min(min_probes, c.check.probes);
    if (c.check.probes < 20 || !(c.check.max_rel_error <= 1e-4)) {
      o.pass = false;
      failing += " " + c.name;
    }
  }
  if (elapsed >= 120.0) o.pass = false;
  o.detail = std::to_string(checks.size()) + " checks, >=" + std::to_string(min_probes) +
             " probes, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f s", elapsed) +
             (failing.empty() ? "" : "; failing:" + failing);
  return o;
}

// --- convolution ------------------------------------------------------------

Outcome conv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<std::size_t> ch(1, 5), ext(3, 14), odd(0, 2), st(1, 3), pd(0, 2);
  std::size_t cases = 0;
  double worst = 0.0;
  while (cases < 100) {
    const std::size_t ci = ch(rng), co = ch(rng), h = ext(rng), w = ext(rng);
    const std::size_t kk = 2 * odd(rng) + 1, stride = st(rng), pad = pd(rng);
    if (h + 2 * pad < kk || w + 2 * pad < kk) continue;
    const auto x = random_tensor({ci, h, w}, rng);
    const auto k = random_tensor({co, ci, kk, kk}, rng);
    const auto y = cgl::conv2d(x, cgl::ConvSpec<double>{k, stride, pad});
    std::size_t oh = 0, ow = 0;
    const auto ref = cgl::testing::naive_conv2d({x.data().begin(), x.data().end()}, ci, h, w,
                                                {k.data().begin(), k.data().end()}, co, kk, kk,
                                                stride, pad, oh, ow);
    if (y.shape() != cgl::Shape{co, oh, ow}) return {false, "shape mismatch on case " + std::to_string(cases)};
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, cgl::testing::relative_error(y.data()[i], ref[i], 1e-300));
    ++cases;
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-12 && elapsed < 60.0,
          "100 cases, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f s", elapsed)};
}

// --- pseudo labels ----------------------------------------------------------

cgl::DepthMap acceptance_depth(std::mt19937_64& rng, int t) {
  cgl::DepthMap d(32, 32);
  if (t % 2) {
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (auto& v : d.values) v = u(rng);
    return d;
  }
  std::uniform_int_distribution<int> level(0, 4);
  std::vector<int> tiles(25);
  for (auto& v : tiles) v = level(rng);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) d.at(y, x) = 2.0 * tiles[(y / 8) * 5 + x / 8];
  return d;
}

Outcome pgt_oracle() {
  std::mt19937_64 rng(30);
  std::size_t exact = 0, superset = 0, ones = 0;
  for (int t = 0; t < 50; ++t) {
    const auto depth = acceptance_depth(rng, t);
    const auto y = cgl::testing::random_mask(8, 8, 0.15, rng);
    const auto pgt = cgl::generate_pgt(depth, y, cgl::PgtConfig{});
    exact += pgt == cgl::testing::naive_pgt(depth, y, 11, 0.55);
    bool covers = true;
    for (std::size_t i = 0; i < y.values.size(); ++i) covers = covers && pgt.values[i] >= y.values[i];
    superset += covers;
    ones += pgt.count_ones();
  }
  return {exact == 50 && superset == 50,
          std::to_string(exact) + "/50 bit-exact, superset on " + std::to_string(superset) +
              "/50, " + std::to_string(ones) + " positive cells"};
}

Outcome pgt_zero_identity() {
  std::mt19937_64 rng(31);
  std::size_t zero = 0, identity = 0;
  for (int t = 0; t < 20; ++t) {
    const double level = std::uniform_real_distribution<double>(0.0, 50.0)(rng);
    cgl::DepthMap flat(32, 32);
    for (auto& v : flat.values) v = level;
    const auto response = cgl::cgl_pattern_response(flat, cgl::PgtConfig{});
    zero += cgl::binarize(response, 0.55).count_ones() == 0 &&
            cgl::generate_pgt(flat, cgl::LabelMask(8, 8), cgl::PgtConfig{}).count_ones() == 0;
    const auto y = cgl::testing::random_mask(8, 8, 0.3, rng);
    identity += cgl::fuse_with_gt(cgl::BinaryMask(8, 8), y) == y &&
                cgl::generate_pgt(flat, y, cgl::PgtConfig{}) == y;
  }
  return {zero == 20 && identity == 20, "constant depth all-zero " + std::to_string(zero) +
                                            "/20, empty-pattern fusion identity " +
                                            std::to_string(identity) + "/20"};
}

// --- losses -----------------------------------------------------------------

Outcome gte_zero() {
  std::mt19937_64 rng(40);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cgl::Encoder<double> enc({{3, 8, 1, 1, true, true}, {8, 6, 1, 1, true, true}, {6, 4, 1, 1, false, true}},
                             seed);
    for (const auto& shape : {cgl::Shape{3, 16, 16}, cgl::Shape{2, 3, 12, 20}}) {
      const auto x = random_tensor(shape, rng, 0, 1);
      worst = std::max(worst, cgl::gte_loss(enc, x, cgl::NormMode::batch_frozen).item());
      worst = std::max(worst, cgl::gte_loss(enc, x, cgl::NormMode::running_statistics).item());
    }
  }
  return {worst < 1e-10, "20 random images, max loss " + fmt("%.2e", worst)};
}

Outcome ivr_zero_and_hand() {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 1 + t % 4, hw = 16;
    std::vector<double> z(2 * hw), f(d * hw);
    const double z0 = u(rng), z1 = u(rng);
    for (std::size_t i = 0; i < hw; ++i) z[i] = z0, z[hw + i] = z1;
    for (std::size_t c = 0; c < d; ++c) {
      const double v = u(rng);
      for (std::size_t i = 0; i < hw; ++i) f[c * hw + i] = v;
    }
    worst = std::max(worst, cgl::ivr_loss(TensorD::from_data({2, 4, 4}, z),
                                          TensorD::from_data({d, 4, 4}, f))
                                .item());
  }
  // Probabilities p1 = (1/2, 3/4, 1/4, 1/2); features [1 2; 3 4] and [2 0; -2 4].
  const double l3 = std::log(3.0);
  const auto z = TensorD::from_data({2, 2, 2}, {0, 0, l3, 0, 0, l3, 0, 0});
  const auto f = TensorD::from_data({2, 2, 2}, {1, 2, 3, 4, 2, 0, -2, 4});
  const double hand = cgl::ivr_loss(z, f).item();
  const double err = std::abs(hand - 1.80859375);
  return {worst < 1e-12 && err <= 1e-10, "constant planes max " + fmt("%.2e", worst) +
                                             ", hand case " + fmt("%.12f", hand) +
                                             " (expected 1.80859375)"};
}

// --- fusion -----------------------------------------------------------------

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

Outcome fusion_identity() {
  cgl::EncoderConfig ec;
  ec.d = 8;
  ec.depth_of_stack = 1;
  ec.seed = 60;
  cgl::CglModel<double> model(ec);
  std::mt19937_64 rng(61);
  model.forward_train(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  model.set_training(false);
  const auto fe = model.encode(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  const auto single =
      model.cglsb().classify(model.cglsb().features(fe, cgl::NormMode::running_statistics));
  const auto fused = model.cglsb_forward(fe, TensorD::full({2, 2, 4, 4}, 1.0));
  const bool identical = std::equal(single.data().begin(), single.data().end(), fused.data().begin(),
                                    fused.data().end());

  model.set_training(true);
  std::vector<cgl::LabelMask> y{cgl::testing::random_mask(4, 4, 0.3, rng),
                                cgl::testing::random_mask(4, 4, 0.3, rng)};
  const auto out = model.forward_train(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  cgl::backward(cgl::cross_entropy_loss(out.cgl_logits, std::span<const cgl::LabelMask>(y)));
  auto& dflb = model.dflb();
  const bool reaches = dflb.layer1().kernel().has_grad() && !all_zero(dflb.layer1().kernel().grad());
  const bool head_zero = (!dflb.head_kernel().has_grad() || all_zero(dflb.head_kernel().grad())) &&
                         (!dflb.head_bias().has_grad() || all_zero(dflb.head_bias().grad()));
  return {identical && reaches && head_zero,
          std::string("bit-exact identity ") + (identical ? "yes" : "no") +
              ", dflb.layer1 grad non-zero " + (reaches ? "yes" : "no") +
              ", dflb.head grad zero " + (head_zero ? "yes" : "no")};
}

// --- metrics ----------------------------------------------------------------

Outcome metric_oracle() {
  std::mt19937_64 rng(70);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t exact = 0;
  for (int t = 0; t < 100; ++t) {
    const auto pred = cgl::testing::random_mask(12, 9, u(rng), rng);
    const auto gt = cgl::testing::random_mask(12, 9, u(rng), rng);
    std::uint64_t tp[2] = {}, fp[2] = {}, fn[2] = {};
    for (std::size_t i = 0; i < pred.values.size(); ++i)
      for (int c = 0; c < 2; ++c) {
        const bool p = pred.values[i] == c, g = gt.values[i] == c;
        tp[c] += p && g;
        fp[c] += p && !g;
        fn[c] += !p && g;
      }
    auto iou = [](std::uint64_t a, std::uint64_t b, std::uint64_t c) {
      return a + b + c == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(a + b + c);
    };
    const auto r = cgl::iou_per_class(pred, gt);
    exact += r.background == cgl::ClassCounts{tp[0], fp[0], fn[0]} &&
             r.cgl == cgl::ClassCounts{tp[1], fp[1], fn[1]} && r.iou_cgl == iou(tp[1], fp[1], fn[1]) &&
             r.iou_background == iou(tp[0], fp[0], fn[0]) &&
             r.miou == (r.iou_cgl + r.iou_background) / 2;
  }
  cgl::LabelMask gt(10, 10);
  for (std::size_t i = 0; i < 10; ++i) gt.values[i * 10 + 7] = 1;
  const auto r = cgl::iou_per_class(cgl::LabelMask(10, 10, 1), gt);
  const bool fixed = r.miou == 0.05 && r.iou_cgl == 0.10;
  return {exact == 100 && fixed, std::to_string(exact) + "/100 exact, all-CGL vs 10%: mIoU " +
                                     fmt("%.17g", r.miou) + ", CGL IoU " + fmt("%.17g", r.iou_cgl)};
}

// --- ablation ---------------------------------------------------------------

double held_out_cgl_iou(std::uint64_t seed, const cgl::LossWeights& weights) {
  cgl::SyntheticDatasetOptions opt;
  opt.count = 200;
  opt.seed = seed;
  const auto scenes = cgl::generate_synthetic_dataset(opt);
  const auto split = cgl::split_dataset(scenes, cgl::SplitMode::disjoint_locations, 0.8, seed);
  cgl::TrainConfig cfg;
  cfg.seed = seed;
  cfg.encoder.seed = seed;
  cfg.weights = weights;
  const auto train = cgl::prepare_samples(split.train, cfg.pgt);
  cgl::CglModel<float> model(cfg.encoder);
  cgl::Trainer<float> trainer(model, cfg);
  trainer.fit(train, split.test);
  return cgl::evaluate(model, split.test).overall.iou_cgl;
}

Outcome ablation() {
  const auto t0 = Clock::now();
  const cgl::LossWeights full{1.0, 1.0, 0.1, 0.1}, alpha_only{1.0, 0.0, 0.0, 0.0};
  int wins = 0;
  double worst_full = 1.0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double f = held_out_cgl_iou(seed, full);
    const double b = held_out_cgl_iou(seed, alpha_only);
    wins += f > b;
    worst_full = std::min(worst_full, f);
    per_seed << " s" << seed << " " << fmt("%.3f", f) << "/" << fmt("%.3f", b);
    std::cerr << "  ablation seed " << seed << ": full " << f << ", alpha-only " << b << " ("
              << fmt("%.0f s", seconds_since(t0)) << ")\n";
  }
  const double elapsed = seconds_since(t0);
  return {wins >= 4 && worst_full >= 0.5 && elapsed <= 600.0,
          std::to_string(wins) + "/5 wins, min full CGL IoU " + fmt("%.3f", worst_full) + ", " +
              fmt("%.0f s", elapsed) + "; full/alpha-only:" + per_seed.str()};
}

// --- determinism and persistence --------------------------------------------

template <typename Real>
std::vector<std::vector<Real>> snapshot(cgl::CglModel<Real>& model) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : model.named_parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  for (const auto& b : model.named_buffers()) out.emplace_back(b.tensor.data().begin(), b.tensor.data().end());
  return out;
}

bool same_report(const cgl::LossReport& a, const cgl::LossReport& b) {
  return a.l_cgl == b.l_cgl && a.l_dflb == b.l_dflb && a.l_gte == b.l_gte && a.l_ivr == b.l_ivr &&
         a.total == b.total;
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  cgl::SyntheticDatasetOptions opt;
  opt.count = 16;
  opt.families = 4;
  opt.seed = 80;
  opt.height = opt.width = 32;
  const auto scenes = cgl::generate_synthetic_dataset(opt);
  const auto samples = cgl::prepare_samples(scenes, cgl::PgtConfig{});
  cgl::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.encoder.d = 8;
  cfg.encoder.depth_of_stack = 1;

  std::vector<std::vector<cgl::EpochRecord>> runs;
  for (int r = 0; r < 2; ++r) {
    cgl::CglModel<float> m(cfg.encoder);
    cgl::Trainer<float> t(m, cfg);
    runs.push_back(t.fit(samples, scenes));
  }
  bool repeat = runs[0].size() == runs[1].size();
  for (std::size_t e = 0; repeat && e < runs[0].size(); ++e)
    repeat = same_report(runs[0][e].losses, runs[1][e].losses) &&
             runs[0][e].cgl_iou == runs[1][e].cgl_iou;

  cgl::CglModel<float> full(cfg.encoder);
  cgl::Trainer<float> full_trainer(full, cfg);
  full_trainer.run_epoch(samples, scenes);
  full_trainer.run_epoch(samples, scenes);
  const auto third = full_trainer.run_epoch(samples, scenes);

  cgl::CglModel<float> part(cfg.encoder);
  cgl::Trainer<float> part_trainer(part, cfg);
  part_trainer.run_epoch(samples, scenes);
  part_trainer.run_epoch(samples, scenes);
  cgl::save_checkpoint(part, dir / "model.cglm");
  auto reloaded = cgl::load_checkpoint<float>(dir / "model.cglm");
  const bool round_trip = snapshot(reloaded) == snapshot(part);

  part_trainer.save_state(dir / "state.cglm");
  auto resumed = cgl::load_checkpoint<float>(dir / "state.cglm");
  cgl::Trainer<float> resumed_trainer(resumed, cfg);
  resumed_trainer.load_state(dir / "state.cglm");
  const auto again = resumed_trainer.run_epoch(samples, scenes);
  const bool resume = same_report(again.losses, third.losses) && again.cgl_iou == third.cgl_iou &&
                      snapshot(resumed) == snapshot(full);
  fs::remove_all(dir);
  return {repeat && round_trip && resume,
          std::string("repeat run bit-exact ") + (repeat ? "yes" : "no") + ", checkpoint round trip " +
              (round_trip ? "yes" : "no") + ", resumed epoch matches " + (resume ? "yes" : "no")};
}

// --- inference contract -----------------------------------------------------

// infer takes an image tensor and nothing else.
static_assert(std::is_same_v<decltype(&cgl::CglModel<float>::infer),
                             cgl::Tensor<float> (cgl::CglModel<float>::*)(const cgl::Tensor<float>&)>);

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cgl::cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome infer_contract() {
  const auto dir = scratch("infer");
  {
    std::ofstream(dir / "tiny.cfg") << "epochs = 1\nbatch_size = 4\nencoder.d = 8\nencoder.depth = 1\n";
  }
  if (run_cli({"synth", "--out", (dir / "data").string(), "--count", "8", "--size", "32", "-q"}) ||
      run_cli({"train", "--data", (dir / "data" / "annotations.json").string(), "--out",
               (dir / "run").string(), "--config", (dir / "tiny.cfg").string(), "-q"})) {
    return {false, "could not prepare a trained model"};
  }
  const auto model = dir / "run" / "model.cglm";
  const auto image = dir / "data" / "images" / "scene_00000.png";
  const auto log = dir / "audit.log";

  // Prefer the installed tool binary so the audit covers a separate process.
  const char* tool = std::getenv("CGL_TEST_TOOL");
  auto infer = [&](const fs::path& out) {
    if (tool && *tool) {
      const std::string cmd = "CGL_IO_AUDIT=\"" + log.string() + "\" \"" + tool + "\" -q infer --model \"" +
                              model.string() + "\" --image \"" + image.string() + "\" --out \"" +
                              out.string() + "\"";
      return std::system(cmd.c_str()) == 0;
    }
    setenv("CGL_IO_AUDIT", log.string().c_str(), 1);
    const bool ok = run_cli({"-q", "infer", "--model", model.string(), "--image", image.string(),
                             "--out", out.string()}) == 0;
    unsetenv("CGL_IO_AUDIT");
    return ok;
  };

  fs::remove(log);
  if (!infer(dir / "with_depth.png")) return {false, "infer failed"};
  std::istringstream lines(slurp(log));
  std::vector<fs::path> reads;
  for (std::string l; std::getline(lines, l);) reads.emplace_back(l);
  const bool only_inputs = reads.size() == 2 && reads[0] == fs::absolute(model).lexically_normal() &&
                           reads[1] == fs::absolute(image).lexically_normal();

  // Same prediction with every depth raster deleted.
  fs::remove_all(dir / "data" / "depth");
  fs::remove(log);
  const bool without = infer(dir / "without_depth.png");
  const bool same = without && slurp(dir / "with_depth_mask.png") == slurp(dir / "without_depth_mask.png") &&
                    slurp(dir / "with_depth.png") == slurp(dir / "without_depth.png");
  fs::remove_all(dir);
  return {only_inputs && same,
          std::to_string(reads.size()) + " file reads (model and image only: " +
              (only_inputs ? "yes" : "no") + "), identical output without depth files: " +
              (same ? "yes" : "no") + (tool ? ", via tool binary" : ", in process")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient-suite", gradient_suite},
      {"conv-oracle", conv_oracle},
      {"pgt-oracle", pgt_oracle},
      {"pgt-zero-identity", pgt_zero_identity},
      {"gte-analytic-zero", gte_zero},
      {"ivr-analytic-zero", ivr_zero_and_hand},
      {"fusion-identity", fusion_identity},
      {"metric-oracle", metric_oracle},
      {"ablation-trend", ablation},
      {"determinism-persistence", determinism},
      {"infer-no-depth", infer_contract},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
