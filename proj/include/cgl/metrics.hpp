#pragma once

// Segmentation metrics at the model's native (quarter) resolution.
// Counts are accumulated over a whole split and divided once.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cgl/dataset.hpp"
#include "cgl/imaging.hpp"
#include "cgl/model.hpp"

namespace cgl {

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;

  /// tp / (tp + fp + fn); an empty union counts as perfect agreement (1).
  double iou() const;
  bool operator==(const ClassCounts&) const = default;
};

struct IouReport {
  ClassCounts background;
  ClassCounts cgl;
  double iou_background = 1.0;
  double iou_cgl = 1.0;
  double miou = 1.0;

  static IouReport from_counts(const ClassCounts& background, const ClassCounts& cgl);
};

class IouAccumulator {
 public:
  /// Throws std::invalid_argument on a shape mismatch or non-binary values.
  void add(const LabelMask& pred, const LabelMask& gt);
  void merge(const IouAccumulator& other);
  IouReport report() const { return IouReport::from_counts(background_, cgl_); }

 private:
  ClassCounts background_;
  ClassCounts cgl_;
};

IouReport iou_per_class(const LabelMask& pred, const LabelMask& gt);

/// Rasterises detector boxes into a quarter-resolution mask, clipping boxes to
/// the image. Each clipped or dropped box appends a line to `warnings` if given.
LabelMask detections_to_mask(const std::vector<CglBox>& boxes, std::size_t height,
                             std::size_t width, std::vector<std::string>* warnings = nullptr);

struct ImageReport {
  std::string name;
  IouReport report;
};

struct Evaluation {
  IouReport overall;
  std::vector<ImageReport> per_image;
};

/// Runs inference on every scene (images only) and scores it against the
/// rasterised annotation boxes. Throws std::invalid_argument on an empty split.
template <typename Real>
Evaluation evaluate(CglModel<Real>& model, const std::vector<AnnotatedScene>& scenes,
                    std::size_t batch_size = 16);

struct NamedReport {
  std::string split;
  IouReport report;
};

/// Header: split,miou,iou_cgl,iou_background,tp_cgl,fp_cgl,fn_cgl,
/// tp_background,fp_background,fn_background
void write_metrics_csv(std::ostream& os, const std::vector<NamedReport>& rows);
void write_metrics_table(std::ostream& os, const std::vector<NamedReport>& rows);

}  // namespace cgl
