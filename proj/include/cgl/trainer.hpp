#pragma once

// Training: configuration files, sample preparation (pseudo labels from
// depth, cached on disk), the weighted four-loss step, the epoch loop, and
// the CGLM checkpoint format.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgl/dataset.hpp"
#include "cgl/losses.hpp"
#include "cgl/metrics.hpp"
#include "cgl/model.hpp"

namespace cgl {

enum class Precision { f32, f64 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  LossWeights weights;
  std::uint64_t seed = 1;
  Precision precision = Precision::f32;
  PgtConfig pgt;
  EncoderConfig encoder;
  IvrOptions ivr;
  SplitMode split_mode = SplitMode::disjoint_locations;
  double split_ratio = 0.8;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// `key = value` lines, `#` starts a comment. Keys:
///   epochs, batch_size, learning_rate, momentum, seed, precision (f32|f64),
///   alpha, beta, gamma, delta,
///   pgt.kernel, pgt.threshold, pgt.mode (magnitude|signed_horizontal),
///   encoder.d, encoder.depth, encoder.seed,
///   ivr.normalization (per_channel|none), ivr.detach (true|false),
///   split.mode (disjoint|partial_overlap), split.ratio
/// Unknown keys and malformed values are errors; missing keys keep defaults.
TrainConfig parse_train_config(std::istream& in, const std::string& origin = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);
void write_train_config(std::ostream& os, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// samples

struct TrainingSample {
  std::string name;
  RgbImage image;
  LabelMask y_cgl;
  LabelMask y_dflb;
};

/// On-disk cache of pseudo-label masks keyed by a hash of the depth values
/// and the PgtConfig.
class PgtCache {
 public:
  explicit PgtCache(std::filesystem::path dir);

  std::optional<LabelMask> find(const DepthMap& depth, const PgtConfig& cfg) const;
  void store(const DepthMap& depth, const PgtConfig& cfg, const LabelMask& mask) const;
  std::filesystem::path entry_path(const DepthMap& depth, const PgtConfig& cfg) const;

 private:
  std::filesystem::path dir_;
};

/// 64-bit FNV-1a over the raw bytes.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Builds y_cgl from the boxes and y_dflb from the depth map. Scenes without
/// depth are rejected. Work is split over CGL_THREADS threads.
std::vector<TrainingSample> prepare_samples(const std::vector<AnnotatedScene>& scenes,
                                            const PgtConfig& cfg, const PgtCache* cache = nullptr);

/// Number of worker threads from CGL_THREADS (default: hardware concurrency).
std::size_t worker_threads();

// ---------------------------------------------------------------------------
// training

/// One optimisation step on `batch`: forward both decoders, all four losses,
/// backward on the weighted total, one SGD step. Terms with weight zero are
/// still reported, except GTE which is skipped (reported as 0) when gamma = 0.
template <typename Real>
LossReport train_step(CglModel<Real>& model, Sgd<Real>& optimizer,
                      std::span<const TrainingSample> batch, const TrainConfig& cfg);

/// Losses on a batch without updating anything (batch statistics, no running
/// stat updates).
template <typename Real>
LossReport evaluate_losses(CglModel<Real>& model, std::span<const TrainingSample> batch,
                           const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  LossReport losses;      // mean over the epoch's steps
  double miou = 0.0;
  double cgl_iou = 0.0;
};

template <typename Real>
class Trainer {
 public:
  Trainer(CglModel<Real>& model, const TrainConfig& cfg);

  /// Shuffles with a generator seeded by (seed, epoch), runs the steps, then
  /// evaluates on `test` if it is non-empty.
  EpochRecord run_epoch(const std::vector<TrainingSample>& train,
                        const std::vector<AnnotatedScene>& test);

  /// Runs the remaining epochs up to cfg.epochs and finishes with the
  /// best-by-CGL-IoU parameters loaded into the model.
  std::vector<EpochRecord> fit(const std::vector<TrainingSample>& train,
                               const std::vector<AnnotatedScene>& test,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

  std::size_t epochs_done() const { return epochs_done_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  Sgd<Real>& optimizer() { return optimizer_; }

  /// Model, optimizer velocities, epoch counter, history and best snapshot.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);
  void restore_best();

 private:
  CglModel<Real>& model_;
  TrainConfig cfg_;
  Sgd<Real> optimizer_;
  std::size_t epochs_done_ = 0;
  std::vector<EpochRecord> history_;
  double best_cgl_iou_ = -1.0;
  std::vector<NamedTensor<Real>> best_;  // copies of parameters and buffers
};

/// Header: epoch,l_cgl,l_dflb,l_gte,l_ivr,total,miou,cgl_iou, preceded by a
/// `# weights: alpha=.. beta=.. gamma=.. delta=..` comment.
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history,
                       const LossWeights& weights);

struct History {
  LossWeights weights;
  bool has_weights = false;
  std::vector<EpochRecord> epochs;
};

/// Throws FormatError on a malformed file.
History read_history_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
  std::uint8_t element_size = 4;  // 4: f32 on disk, 8: f64 on disk
};

struct Checkpoint {
  EncoderConfig config;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "CGLM", u32 version, EncoderConfig (u32 d, u32 depth_of_stack, u64 seed),
/// u32 record count, then per record: u32 name length, name bytes, u8 element
/// size, u32 rank, u32 extents, little-endian values.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters and batch-norm running statistics.
template <typename Real>
Checkpoint model_checkpoint(CglModel<Real>& model);

template <typename Real>
void save_checkpoint(CglModel<Real>& model, const std::filesystem::path& path);

/// Builds a model from the stored config and loads every parameter and
/// buffer; throws CheckpointError if any is missing or malformed.
template <typename Real>
CglModel<Real> load_checkpoint(const std::filesystem::path& path);

template <typename Real>
CglModel<Real> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cgl
