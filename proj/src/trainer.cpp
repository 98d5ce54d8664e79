#include "cgl/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "cgl/random.hpp"

namespace cgl {

// ---------------------------------------------------------------------------
// configuration

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split.ratio must lie in (0, 1)");
  try {
    weights.validate();
    pgt.validate();
    encoder.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(where + ": '" + text + "' is not a valid number");
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(where + ": '" + text + "' is not a boolean");
}

}  // namespace

TrainConfig parse_train_config(std::istream& in, const std::string& origin) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "epochs") cfg.epochs = parse_number<std::size_t>(value, where);
      else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(value, where);
      else if (key == "learning_rate") cfg.learning_rate = parse_number<double>(value, where);
      else if (key == "momentum") cfg.momentum = parse_number<double>(value, where);
      else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, where);
      else if (key == "alpha") cfg.weights.alpha = parse_number<double>(value, where);
      else if (key == "beta") cfg.weights.beta = parse_number<double>(value, where);
      else if (key == "gamma") cfg.weights.gamma = parse_number<double>(value, where);
      else if (key == "delta") cfg.weights.delta = parse_number<double>(value, where);
      else if (key == "precision") {
        if (value == "f32" || value == "32") cfg.precision = Precision::f32;
        else if (value == "f64" || value == "64") cfg.precision = Precision::f64;
        else throw ConfigError(where + ": precision must be f32 or f64");
      } else if (key == "pgt.kernel") {
        cfg.pgt.smoothing_kernel_size = parse_number<int>(value, where);
      } else if (key == "pgt.threshold") {
        cfg.pgt.threshold = parse_number<double>(value, where);
      } else if (key == "pgt.mode") {
        cfg.pgt.response_mode = parse_response_mode(value);
      } else if (key == "encoder.d") {
        cfg.encoder.d = parse_number<std::size_t>(value, where);
      } else if (key == "encoder.depth") {
        cfg.encoder.depth_of_stack = parse_number<std::size_t>(value, where);
      } else if (key == "encoder.seed") {
        cfg.encoder.seed = parse_number<std::uint64_t>(value, where);
      } else if (key == "ivr.normalization") {
        if (value == "per_channel") cfg.ivr.normalization = IvrNormalization::per_channel;
        else if (value == "none") cfg.ivr.normalization = IvrNormalization::none;
        else throw ConfigError(where + ": ivr.normalization must be per_channel or none");
      } else if (key == "ivr.detach") {
        cfg.ivr.detach_probabilities = parse_bool(value, where);
      } else if (key == "split.mode") {
        cfg.split_mode = parse_split_mode(value);
      } else if (key == "split.ratio") {
        cfg.split_ratio = parse_number<double>(value, where);
      } else {
        throw ConfigError(where + ": unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  auto in = io::open_for_read(path);
  return parse_train_config(in, path.string());
}

void write_train_config(std::ostream& os, const TrainConfig& cfg) {
  const auto flags = os.flags();
  os << std::setprecision(17);
  os << "epochs = " << cfg.epochs << '\n'
     << "batch_size = " << cfg.batch_size << '\n'
     << "learning_rate = " << cfg.learning_rate << '\n'
     << "momentum = " << cfg.momentum << '\n'
     << "seed = " << cfg.seed << '\n'
     << "precision = " << (cfg.precision == Precision::f32 ? "f32" : "f64") << '\n'
     << "alpha = " << cfg.weights.alpha << '\n'
     << "beta = " << cfg.weights.beta << '\n'
     << "gamma = " << cfg.weights.gamma << '\n'
     << "delta = " << cfg.weights.delta << '\n'
     << "pgt.kernel = " << cfg.pgt.smoothing_kernel_size << '\n'
     << "pgt.threshold = " << cfg.pgt.threshold << '\n'
     << "pgt.mode = " << to_string(cfg.pgt.response_mode) << '\n'
     << "encoder.d = " << cfg.encoder.d << '\n'
     << "encoder.depth = " << cfg.encoder.depth_of_stack << '\n'
     << "encoder.seed = " << cfg.encoder.seed << '\n'
     << "ivr.normalization = "
     << (cfg.ivr.normalization == IvrNormalization::per_channel ? "per_channel" : "none") << '\n'
     << "ivr.detach = " << (cfg.ivr.detach_probabilities ? "true" : "false") << '\n'
     << "split.mode = " << to_string(cfg.split_mode) << '\n'
     << "split.ratio = " << cfg.split_ratio << '\n';
  os.flags(flags);
}

// ---------------------------------------------------------------------------
// samples and the PGT cache

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

PgtCache::PgtCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path PgtCache::entry_path(const DepthMap& depth, const PgtConfig& cfg) const {
  std::uint64_t h = fnv1a({reinterpret_cast<const std::uint8_t*>(depth.values.data()),
                           depth.values.size() * sizeof(double)});
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(depth.height),
                                 static_cast<std::uint32_t>(depth.width)};
  h = fnv1a({reinterpret_cast<const std::uint8_t*>(dims), sizeof dims}, h);
  const std::string key = cfg.key();
  h = fnv1a({reinterpret_cast<const std::uint8_t*>(key.data()), key.size()}, h);
  std::ostringstream name;
  name << std::hex << std::setw(16) << std::setfill('0') << h << ".png";
  return dir_ / name.str();
}

std::optional<LabelMask> PgtCache::find(const DepthMap& depth, const PgtConfig& cfg) const {
  const auto path = entry_path(depth, cfg);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    auto mask = read_png_mask(path);
    if (mask.height * 4 != depth.height || mask.width * 4 != depth.width) return std::nullopt;
    return mask;
  } catch (const IoError&) {
    return std::nullopt;
  }
}

void PgtCache::store(const DepthMap& depth, const PgtConfig& cfg, const LabelMask& mask) const {
  const auto path = entry_path(depth, cfg);
  const auto tmp = path.string() + ".tmp";
  write_png_mask(tmp, mask);
  std::filesystem::rename(tmp, path);
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("CGL_THREADS"); env && *env) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<TrainingSample> prepare_samples(const std::vector<AnnotatedScene>& scenes,
                                            const PgtConfig& cfg, const PgtCache* cache) {
  cfg.validate();
  std::vector<TrainingSample> out(scenes.size());
  auto work = [&](std::size_t i) {
    const auto& s = scenes[i];
    if (!s.depth) throw DatasetError(s.name + ": no depth map, cannot build pseudo labels");
    auto& t = out[i];
    t.name = s.name;
    t.image = s.image;
    t.y_cgl = boxes_to_mask(s.boxes, s.image.height, s.image.width);
    if (cache) {
      if (auto hit = cache->find(*s.depth, cfg)) {
        t.y_dflb = fuse_with_gt(*hit, t.y_cgl);
        return;
      }
    }
    const auto pattern =
        downsample_any(binarize(cgl_pattern_response(*s.depth, cfg), cfg.threshold), 4);
    if (cache) cache->store(*s.depth, cfg, pattern);
    t.y_dflb = fuse_with_gt(pattern, t.y_cgl);
  };

  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(scenes.size(), 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i) work(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < scenes.size(); i += threads) work(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// training step

namespace {

template <typename Real>
struct Batch {
  Tensor<Real> images;
  std::vector<LabelMask> y_cgl, y_dflb;
};

template <typename Real>
Batch<Real> assemble(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  Batch<Real> b;
  std::vector<Tensor<Real>> images;
  for (const auto& s : samples) {
    images.push_back(image_to_tensor<Real>(s.image));
    b.y_cgl.push_back(s.y_cgl);
    b.y_dflb.push_back(s.y_dflb);
  }
  b.images = stack(images);
  return b;
}

template <typename Real>
struct LossTerms {
  Tensor<Real> l_cgl, l_dflb, l_gte, l_ivr;
};

template <typename Real>
LossTerms<Real> compute_losses(CglModel<Real>& model, const Batch<Real>& b,
                               const TrainConfig& cfg) {
  LossTerms<Real> t;
  const auto out = model.forward_train(b.images);
  t.l_cgl = cross_entropy_loss(out.cgl_logits, std::span<const LabelMask>(b.y_cgl));
  t.l_dflb = cross_entropy_loss(out.dflb_logits, std::span<const LabelMask>(b.y_dflb));
  if (cfg.weights.gamma > 0.0) {
    t.l_gte = gte_loss(model.encoder(), b.images, NormMode::batch_frozen,
                       RotationDirection::counter_clockwise, &out.encoded);
  }
  if (cfg.weights.delta > 0.0) {
    t.l_ivr = ivr_loss(out.cgl_logits, out.encoded, cfg.ivr);
  } else {
    t.l_ivr = ivr_loss(detach(out.cgl_logits), detach(out.encoded), cfg.ivr);
  }
  return t;
}

template <typename Real>
LossReport report_of(const LossTerms<Real>& t, const LossWeights& w) {
  auto value = [](const Tensor<Real>& x) {
    return x.defined() ? static_cast<double>(x.item()) : 0.0;
  };
  const auto r = total_loss(value(t.l_cgl), value(t.l_dflb), value(t.l_gte), value(t.l_ivr), w);
  if (!std::isfinite(r.total)) {
    throw NonFiniteError("non-finite training loss (l_cgl=" + std::to_string(r.l_cgl) +
                         ", l_dflb=" + std::to_string(r.l_dflb) + ", l_gte=" +
                         std::to_string(r.l_gte) + ", l_ivr=" + std::to_string(r.l_ivr) + ")");
  }
  return r;
}

}  // namespace

template <typename Real>
LossReport train_step(CglModel<Real>& model, Sgd<Real>& optimizer,
                      std::span<const TrainingSample> batch, const TrainConfig& cfg) {
  const auto b = assemble<Real>(batch);
  model.set_training(true);
  model.set_update_running_stats(true);
  const auto terms = compute_losses(model, b, cfg);
  const auto report = report_of(terms, cfg.weights);
  const auto total = weighted_total(terms.l_cgl, terms.l_dflb, terms.l_gte,
                                    terms.l_ivr, cfg.weights);
  backward(total);
  optimizer.step();
  return report;
}

template <typename Real>
LossReport evaluate_losses(CglModel<Real>& model, std::span<const TrainingSample> batch,
                           const TrainConfig& cfg) {
  const auto b = assemble<Real>(batch);
  const bool was_training = model.training();
  model.set_training(true);
  model.set_update_running_stats(false);
  const auto terms = compute_losses(model, b, cfg);
  model.set_update_running_stats(true);
  model.set_training(was_training);
  return report_of(terms, cfg.weights);
}

// ---------------------------------------------------------------------------
// Trainer

template <typename Real>
Trainer<Real>::Trainer(CglModel<Real>& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      optimizer_(model.parameters(), static_cast<Real>(cfg.learning_rate),
                 static_cast<Real>(cfg.momentum)) {
  cfg_.validate();
}

template <typename Real>
EpochRecord Trainer<Real>::run_epoch(const std::vector<TrainingSample>& train,
                                     const std::vector<AnnotatedScene>& test) {
  if (train.empty()) throw std::invalid_argument("training split is empty");
  EpochRecord rec;
  rec.epoch = epochs_done_ + 1;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(cfg_.seed, rec.epoch));
  std::shuffle(order.begin(), order.end(), rng);

  double sums[5] = {0, 0, 0, 0, 0};
  std::vector<TrainingSample> batch;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i) {
      batch.push_back(train[order[i]]);
    }
    const auto r = train_step(model_, optimizer_, std::span<const TrainingSample>(batch), cfg_);
    sums[0] += r.l_cgl;
    sums[1] += r.l_dflb;
    sums[2] += r.l_gte;
    sums[3] += r.l_ivr;
    sums[4] += r.total;
    ++rec.steps;
  }
  const double n = static_cast<double>(rec.steps);
  rec.losses = {sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n};

  if (test.empty()) {
    rec.miou = rec.cgl_iou = std::numeric_limits<double>::quiet_NaN();
  } else {
    const auto ev = evaluate(model_, test);
    rec.miou = ev.overall.miou;
    rec.cgl_iou = ev.overall.iou_cgl;
    if (rec.cgl_iou > best_cgl_iou_) {
      best_cgl_iou_ = rec.cgl_iou;
      best_ = model_.named_parameters();
      for (auto& p : best_) p.tensor = detach(p.tensor);
      for (auto& b : model_.named_buffers()) best_.push_back(b);
    }
  }
  ++epochs_done_;
  history_.push_back(rec);
  return rec;
}

template <typename Real>
std::vector<EpochRecord> Trainer<Real>::fit(const std::vector<TrainingSample>& train,
                                            const std::vector<AnnotatedScene>& test,
                                            const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("training split is empty");
  while (epochs_done_ < cfg_.epochs) {
    const auto rec = run_epoch(train, test);
    if (on_epoch) on_epoch(rec);
  }
  restore_best();
  return history_;
}

template <typename Real>
void Trainer<Real>::restore_best() {
  for (const auto& b : best_) model_.load_tensor(b.name, b.tensor.data());
}

namespace {

constexpr const char* kVelocityPrefix = "optim.velocity.";
constexpr const char* kBestPrefix = "best.";
constexpr std::size_t kHistoryColumns = 10;

}  // namespace

template <typename Real>
void Trainer<Real>::save_state(const std::filesystem::path& path) const {
  Checkpoint ckpt = model_checkpoint(model_);
  const std::uint8_t elem = sizeof(Real);
  const auto names = model_.named_parameters();
  const auto& vel = optimizer_.velocities();
  for (std::size_t i = 0; i < names.size(); ++i) {
    ckpt.records.push_back({kVelocityPrefix + names[i].name, names[i].tensor.shape(),
                            std::vector<double>(vel[i].begin(), vel[i].end()), elem});
  }
  for (const auto& b : best_) {
    const auto d = b.tensor.data();
    ckpt.records.push_back(
        {kBestPrefix + b.name, b.tensor.shape(), std::vector<double>(d.begin(), d.end()), elem});
  }
  ckpt.records.push_back({"trainer.epochs_done", {1}, {static_cast<double>(epochs_done_)}, 8});
  ckpt.records.push_back({"trainer.best_cgl_iou", {1}, {best_cgl_iou_}, 8});
  CheckpointRecord hist{"trainer.history", {history_.size(), kHistoryColumns}, {}, 8};
  for (const auto& h : history_) {
    hist.values.insert(hist.values.end(),
                       {static_cast<double>(h.epoch), static_cast<double>(h.steps), h.losses.l_cgl,
                        h.losses.l_dflb, h.losses.l_gte, h.losses.l_ivr, h.losses.total, h.miou,
                        h.cgl_iou, 0.0});
  }
  ckpt.records.push_back(std::move(hist));
  write_checkpoint(path, ckpt);
}

template <typename Real>
void Trainer<Real>::load_state(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const auto& c = ckpt.config;
  if (c.d != model_.config().d || c.depth_of_stack != model_.config().depth_of_stack) {
    throw CheckpointError(path.string() + ": encoder configuration differs from the model");
  }
  auto to_real = [](const std::vector<double>& v) { return std::vector<Real>(v.begin(), v.end()); };

  const auto params = model_.named_parameters();
  auto& vel = optimizer_.velocities();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* r = ckpt.find(kVelocityPrefix + params[i].name);
    if (!r || r->values.size() != vel[i].size()) {
      throw CheckpointError(path.string() + ": missing optimizer state for " + params[i].name);
    }
    vel[i] = to_real(r->values);
  }
  std::vector<NamedTensor<Real>> best;
  for (const auto& r : ckpt.records) {
    if (r.name.rfind(kBestPrefix, 0) == 0) {
      best.push_back({r.name.substr(std::strlen(kBestPrefix)),
                      Tensor<Real>::from_data(r.shape, to_real(r.values))});
    }
  }
  const auto* done = ckpt.find("trainer.epochs_done");
  const auto* best_iou = ckpt.find("trainer.best_cgl_iou");
  const auto* hist = ckpt.find("trainer.history");
  if (!done || !best_iou || !hist || hist->shape.size() != 2 || hist->shape[1] != kHistoryColumns) {
    throw CheckpointError(path.string() + ": not a training state file");
  }
  // Model last, so a failure above leaves it untouched.
  CglModel<Real> loaded = model_from_checkpoint<Real>(ckpt);
  for (const auto& p : loaded.named_parameters()) model_.load_tensor(p.name, p.tensor.data());
  for (const auto& b : loaded.named_buffers()) model_.load_tensor(b.name, b.tensor.data());

  best_ = std::move(best);
  epochs_done_ = static_cast<std::size_t>(done->values.at(0));
  best_cgl_iou_ = best_iou->values.at(0);
  history_.clear();
  for (std::size_t i = 0; i < hist->shape[0]; ++i) {
    const double* row = hist->values.data() + i * kHistoryColumns;
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(row[0]);
    e.steps = static_cast<std::size_t>(row[1]);
    e.losses = {row[2], row[3], row[4], row[5], row[6]};
    e.miou = row[7];
    e.cgl_iou = row[8];
    history_.push_back(e);
  }
}

// ---------------------------------------------------------------------------
// history CSV

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       const LossWeights& weights) {
  std::ostringstream s;
  s << "# weights: alpha=" << weights.alpha << " beta=" << weights.beta
    << " gamma=" << weights.gamma << " delta=" << weights.delta << '\n';
  s << std::setprecision(17);
  s << "epoch,l_cgl,l_dflb,l_gte,l_ivr,total,miou,cgl_iou\n";
  for (const auto& h : history) {
    s << h.epoch << ',' << h.losses.l_cgl << ',' << h.losses.l_dflb << ',' << h.losses.l_gte << ','
      << h.losses.l_ivr << ',' << h.losses.total << ',' << h.miou << ',' << h.cgl_iou << '\n';
  }
  os << s.str();
}

History read_history_csv(const std::filesystem::path& path) {
  auto in = io::open_for_read(path);
  History out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ws(line.substr(1));
      std::string tok;
      std::map<std::string, double> kv;
      while (ws >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        char* end = nullptr;
        const double v = std::strtod(tok.c_str() + eq + 1, &end);
        if (*end == '\0') kv[tok.substr(0, eq)] = v;
      }
      if (kv.count("alpha") && kv.count("beta") && kv.count("gamma") && kv.count("delta")) {
        out.weights = {kv["alpha"], kv["beta"], kv["gamma"], kv["delta"]};
        out.has_weights = true;
      }
      continue;
    }
    if (!header) {
      if (line != "epoch,l_cgl,l_dflb,l_gte,l_ivr,total,miou,cgl_iou") fail("unexpected header");
      header = true;
      continue;
    }
    std::vector<double> v;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      const double x = std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0') fail("malformed value '" + cell + "'");
      v.push_back(x);
    }
    if (v.size() != 8) fail("expected 8 columns, found " + std::to_string(v.size()));
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(v[0]);
    e.losses = {v[1], v[2], v[3], v[4], v[5]};
    e.miou = v[6];
    e.cgl_iou = v[7];
    out.epochs.push_back(e);
  }
  if (!header) throw FormatError(path.string() + ": missing header");
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

namespace {

constexpr char kModelMagic[4] = {'C', 'G', 'L', 'M'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > buf_.size() - pos_) throw CheckpointError(origin_ + ": truncated checkpoint");
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kModelMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.config.d));
  w.u32(static_cast<std::uint32_t>(ckpt.config.depth_of_stack));
  w.u64(ckpt.config.seed);
  w.u32(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (r.values.size() != numel(r.shape)) {
      throw CheckpointError("record '" + r.name + "' has " + std::to_string(r.values.size()) +
                            " values for shape " + to_string(r.shape));
    }
    if (r.element_size != 4 && r.element_size != 8) {
      throw CheckpointError("record '" + r.name + "' has unsupported element size");
    }
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u8(r.element_size);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) w.u32(static_cast<std::uint32_t>(e));
    for (double v : r.values) {
      if (r.element_size == 4) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else w.u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  const auto tmp = path.string() + ".tmp";
  {
    auto out = io::open_for_write(tmp);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto buf = io::read_file(path);
  const std::string origin = path.string();
  if (buf.size() < 4 || std::memcmp(buf.data(), kModelMagic, 4) != 0) {
    throw CheckpointError(origin + ": bad magic, not a CGLM checkpoint");
  }
  Reader r(buf, origin);
  r.take(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(origin + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  ckpt.config.d = r.u32();
  ckpt.config.depth_of_stack = r.u32();
  ckpt.config.seed = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto len = r.u32();
    const auto* name = r.take(len);
    rec.name.assign(reinterpret_cast<const char*>(name), len);
    rec.element_size = r.u8();
    if (rec.element_size != 4 && rec.element_size != 8) {
      throw CheckpointError(origin + ": record '" + rec.name + "' has a bad element size");
    }
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError(origin + ": record '" + rec.name + "' has a bad rank");
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u32());
    const std::size_t n = numel(rec.shape);
    if (n > r.remaining() / rec.element_size) throw CheckpointError(origin + ": truncated checkpoint");
    rec.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      rec.values[k] = rec.element_size == 4 ? static_cast<double>(std::bit_cast<float>(r.u32()))
                                            : std::bit_cast<double>(r.u64());
    }
    ckpt.records.push_back(std::move(rec));
  }
  if (!r.done()) throw CheckpointError(origin + ": trailing bytes after the last record");
  return ckpt;
}

template <typename Real>
Checkpoint model_checkpoint(CglModel<Real>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  auto add = [&](const NamedTensor<Real>& t) {
    const auto d = t.tensor.data();
    ckpt.records.push_back({t.name, t.tensor.shape(), std::vector<double>(d.begin(), d.end()),
                            static_cast<std::uint8_t>(sizeof(Real))});
  };
  for (const auto& p : model.named_parameters()) add(p);
  for (const auto& b : model.named_buffers()) add(b);
  return ckpt;
}

template <typename Real>
void save_checkpoint(CglModel<Real>& model, const std::filesystem::path& path) {
  write_checkpoint(path, model_checkpoint(model));
}

template <typename Real>
CglModel<Real> model_from_checkpoint(const Checkpoint& ckpt) {
  CglModel<Real> model(ckpt.config);
  auto load = [&](const NamedTensor<Real>& t) {
    const auto* r = ckpt.find(t.name);
    if (!r) throw CheckpointError("checkpoint lacks '" + t.name + "'");
    if (r->shape != t.tensor.shape()) {
      throw CheckpointError("checkpoint record '" + t.name + "' has shape " + to_string(r->shape) +
                            ", expected " + to_string(t.tensor.shape()));
    }
    const std::vector<Real> v(r->values.begin(), r->values.end());
    model.load_tensor(t.name, v);
  };
  for (const auto& p : model.named_parameters()) load(p);
  for (const auto& b : model.named_buffers()) load(b);
  return model;
}

template <typename Real>
CglModel<Real> load_checkpoint(const std::filesystem::path& path) {
  try {
    return model_from_checkpoint<Real>(read_checkpoint(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

#define CGL_INSTANTIATE(R)                                                                   \
  template LossReport train_step<R>(CglModel<R>&, Sgd<R>&, std::span<const TrainingSample>, \
                                    const TrainConfig&);                                     \
  template LossReport evaluate_losses<R>(CglModel<R>&, std::span<const TrainingSample>,     \
                                         const TrainConfig&);                                \
  template class Trainer<R>;                                                                 \
  template Checkpoint model_checkpoint<R>(CglModel<R>&);                                     \
  template void save_checkpoint<R>(CglModel<R>&, const std::filesystem::path&);              \
  template CglModel<R> load_checkpoint<R>(const std::filesystem::path&);                     \
  template CglModel<R> model_from_checkpoint<R>(const Checkpoint&);

CGL_INSTANTIATE(float)
CGL_INSTANTIATE(double)

#undef CGL_INSTANTIATE

}  // namespace cgl
