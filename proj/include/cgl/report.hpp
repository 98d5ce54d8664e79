#pragma once

// Visual output: prediction overlays and static training reports.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "cgl/image_io.hpp"
#include "cgl/imaging.hpp"
#include "cgl/trainer.hpp"

namespace cgl {

/// Nearest-neighbour upsampling by an integer factor.
BinaryMask upsample_nearest(const BinaryMask& mask, std::size_t factor);

/// Mask pixels are blended half-way towards pure red; non-mask pixels that
/// touch a mask pixel (4-neighbourhood) are painted green as blob outlines.
/// `mask` must already be at image resolution.
RgbImage render_overlay(const RgbImage& image, const BinaryMask& mask);

struct NamedHistory {
  std::string label;
  History history;
};

/// Loss components per epoch, one panel per component, one line per run.
void write_loss_plot_svg(std::ostream& os, const std::vector<NamedHistory>& runs);
/// mIoU and CGL IoU per epoch.
void write_iou_plot_svg(std::ostream& os, const std::vector<NamedHistory>& runs);

struct AblationRow {
  std::string label;
  std::string dflb, gte, ivr;  // "on", "off", or "?" without a weights line
  double miou = 0.0;
  double cgl_iou = 0.0;
};

/// One row per run from its final epoch.
std::vector<AblationRow> ablation_rows(const std::vector<NamedHistory>& runs);
void write_ablation_markdown(std::ostream& os, const std::vector<AblationRow>& rows);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace cgl
