#include "cgl/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace cgl {

double ClassCounts::iou() const {
  const std::uint64_t uni = tp + fp + fn;
  return uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
}

IouReport IouReport::from_counts(const ClassCounts& background, const ClassCounts& cgl) {
  IouReport r;
  r.background = background;
  r.cgl = cgl;
  r.iou_background = background.iou();
  r.iou_cgl = cgl.iou();
  r.miou = (r.iou_background + r.iou_cgl) / 2.0;
  return r;
}

void IouAccumulator::add(const LabelMask& pred, const LabelMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("prediction " + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width) + " does not match ground truth " +
                                std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  ClassCounts bg, fg;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const auto p = pred.values[i], g = gt.values[i];
    if (p > 1 || g > 1) throw std::invalid_argument("masks must be binary");
    if (p && g) {
      ++fg.tp;
    } else if (p) {
      ++fg.fp;
      ++bg.fn;
    } else if (g) {
      ++fg.fn;
      ++bg.fp;
    } else {
      ++bg.tp;
    }
  }
  background_.tp += bg.tp;
  background_.fp += bg.fp;
  background_.fn += bg.fn;
  cgl_.tp += fg.tp;
  cgl_.fp += fg.fp;
  cgl_.fn += fg.fn;
}

void IouAccumulator::merge(const IouAccumulator& other) {
  background_.tp += other.background_.tp;
  background_.fp += other.background_.fp;
  background_.fn += other.background_.fn;
  cgl_.tp += other.cgl_.tp;
  cgl_.fp += other.cgl_.fp;
  cgl_.fn += other.cgl_.fn;
}

IouReport iou_per_class(const LabelMask& pred, const LabelMask& gt) {
  IouAccumulator acc;
  acc.add(pred, gt);
  return acc.report();
}

LabelMask detections_to_mask(const std::vector<CglBox>& boxes, std::size_t height,
                             std::size_t width, std::vector<std::string>* warnings) {
  std::vector<CglBox> kept;
  for (const auto& b : boxes) {
    const auto c = clip_box(b, height, width);
    if (!c) {
      if (warnings) warnings->push_back("dropped detection outside the image");
      continue;
    }
    if (!(*c == b) && warnings) warnings->push_back("clipped detection to the image");
    kept.push_back(*c);
  }
  return boxes_to_mask(kept, height, width);
}

template <typename Real>
Evaluation evaluate(CglModel<Real>& model, const std::vector<AnnotatedScene>& scenes,
                    std::size_t batch_size) {
  if (scenes.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  if (batch_size == 0) batch_size = 1;
  Evaluation out;
  IouAccumulator total;
  std::size_t start = 0;
  while (start < scenes.size()) {
    // A batch holds consecutive scenes of one image size.
    std::vector<Tensor<Real>> images;
    for (std::size_t i = start; i < scenes.size() && images.size() < batch_size; ++i) {
      if (scenes[i].image.height != scenes[start].image.height ||
          scenes[i].image.width != scenes[start].image.width) {
        break;
      }
      images.push_back(image_to_tensor<Real>(scenes[i].image));
    }
    const auto preds = argmax_masks(model.infer(stack(images)));
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const auto& scene = scenes[start + k];
      const auto gt = boxes_to_mask(scene.boxes, scene.image.height, scene.image.width);
      IouAccumulator one;
      one.add(preds[k], gt);
      total.merge(one);
      out.per_image.push_back({scene.name, one.report()});
    }
    start += preds.size();
  }
  out.overall = total.report();
  return out;
}

void write_metrics_csv(std::ostream& os, const std::vector<NamedReport>& rows) {
  os << "split,miou,iou_cgl,iou_background,tp_cgl,fp_cgl,fn_cgl,tp_background,fp_background,"
        "fn_background\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const auto& r : rows) {
    line.str("");
    line << r.split << ',' << r.report.miou << ',' << r.report.iou_cgl << ','
         << r.report.iou_background << ',' << r.report.cgl.tp << ',' << r.report.cgl.fp << ','
         << r.report.cgl.fn << ',' << r.report.background.tp << ',' << r.report.background.fp
         << ',' << r.report.background.fn << '\n';
    os << line.str();
  }
}

void write_metrics_table(std::ostream& os, const std::vector<NamedReport>& rows) {
  os << std::left << std::setw(16) << "split" << std::right << std::setw(9) << "mIoU"
     << std::setw(10) << "CGL IoU" << std::setw(10) << "BG IoU" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.split << std::right << std::fixed
       << std::setprecision(2) << std::setw(9) << 100.0 * r.report.miou << std::setw(10)
       << 100.0 * r.report.iou_cgl << std::setw(10) << 100.0 * r.report.iou_background << '\n';
  }
  os << std::defaultfloat;
}

template Evaluation evaluate<float>(CglModel<float>&, const std::vector<AnnotatedScene>&,
                                    std::size_t);
template Evaluation evaluate<double>(CglModel<double>&, const std::vector<AnnotatedScene>&,
                                     std::size_t);

}  // namespace cgl
