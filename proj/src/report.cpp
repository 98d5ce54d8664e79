#include "cgl/report.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cgl {

BinaryMask upsample_nearest(const BinaryMask& mask, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsampling factor must be positive");
  BinaryMask out(mask.height * factor, mask.width * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = mask.at(y / factor, x / factor);
  return out;
}

RgbImage render_overlay(const RgbImage& image, const BinaryMask& mask) {
  if (mask.height != image.height || mask.width != image.width) {
    throw std::invalid_argument("overlay mask must match the image size");
  }
  RgbImage out = image;
  const std::size_t h = image.height, w = image.width;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint8_t* px = &out.pixels[(y * w + x) * 3];
      if (mask.at(y, x)) {
        px[0] = static_cast<std::uint8_t>((px[0] + 255) / 2);
        px[1] = static_cast<std::uint8_t>(px[1] / 2);
        px[2] = static_cast<std::uint8_t>(px[2] / 2);
        continue;
      }
      const bool edge = (y > 0 && mask.at(y - 1, x)) || (y + 1 < h && mask.at(y + 1, x)) ||
                        (x > 0 && mask.at(y, x - 1)) || (x + 1 < w && mask.at(y, x + 1));
      if (edge) {
        px[0] = 0;
        px[1] = 255;
        px[2] = 0;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG plots

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

using Series = std::function<double(const EpochRecord&)>;

struct Panel {
  std::string title;
  std::vector<std::pair<std::string, Series>> series;  // per run: one line per entry
};

void draw_panel(std::ostringstream& os, double ox, double oy, double pw, double ph,
                const std::string& title, const std::vector<NamedHistory>& runs,
                const std::vector<std::pair<std::string, Series>>& series) {
  double xmax = 1, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& r : runs)
    for (const auto& e : r.history.epochs) {
      xmax = std::max(xmax, static_cast<double>(e.epoch));
      for (const auto& [name, f] : series) {
        const double v = f(e);
        if (!std::isfinite(v)) continue;
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;

  const double left = ox + 50, top = oy + 25, w = pw - 70, h = ph - 60;
  auto px = [&](double x) { return left + (xmax > 1 ? (x - 1) / (xmax - 1) : 0.5) * w; };
  auto py = [&](double y) { return top + h - (y - ymin) / (ymax - ymin) * h; };

  os << "<text x=\"" << left << "\" y=\"" << oy + 16 << "\" font-size=\"13\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<text x=\"" << left - 4 << "\" y=\"" << top + 10
     << "\" font-size=\"10\" text-anchor=\"end\">" << std::setprecision(3) << ymax << "</text>\n";
  os << "<text x=\"" << left - 4 << "\" y=\"" << top + h
     << "\" font-size=\"10\" text-anchor=\"end\">" << ymin << "</text>\n";
  os << "<text x=\"" << left + w << "\" y=\"" << top + h + 14
     << "\" font-size=\"10\" text-anchor=\"end\">epoch " << xmax << "</text>\n";

  std::size_t color = 0;
  double legend_y = top + h + 28;
  for (const auto& r : runs) {
    for (const auto& [name, f] : series) {
      const char* c = kPalette[color++ % std::size(kPalette)];
      std::ostringstream pts;
      std::size_t n = 0;
      for (const auto& e : r.history.epochs) {
        const double v = f(e);
        if (!std::isfinite(v)) continue;
        pts << px(static_cast<double>(e.epoch)) << ',' << py(v) << ' ';
        os << "<circle cx=\"" << px(static_cast<double>(e.epoch)) << "\" cy=\"" << py(v)
           << "\" r=\"2\" fill=\"" << c << "\"/>\n";
        ++n;
      }
      if (n > 1) {
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\""
           << pts.str() << "\"/>\n";
      }
      const std::string label = series.size() > 1 ? r.label + " " + name : r.label;
      os << "<text x=\"" << left << "\" y=\"" << legend_y << "\" font-size=\"10\" fill=\"" << c
         << "\">" << escape(label) << "</text>\n";
      legend_y += 12;
    }
  }
}

void write_panels(std::ostream& out, const std::vector<NamedHistory>& runs,
                  const std::vector<Panel>& panels) {
  const double pw = 320;
  const double ph = 220 + 12.0 * static_cast<double>(runs.size() * 2);
  const std::size_t cols = std::min<std::size_t>(panels.size(), 2);
  const std::size_t rows = (panels.size() + cols - 1) / cols;
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << pw * cols << "\" height=\""
     << ph * rows << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    draw_panel(os, pw * (i % cols), ph * (i / cols), pw, ph, panels[i].title, runs,
               panels[i].series);
  }
  os << "</svg>\n";
  out << os.str();
}

}  // namespace

void write_loss_plot_svg(std::ostream& os, const std::vector<NamedHistory>& runs) {
  write_panels(os, runs,
               {{"L_CGL", {{"", [](const EpochRecord& e) { return e.losses.l_cgl; }}}},
                {"L_DFLB", {{"", [](const EpochRecord& e) { return e.losses.l_dflb; }}}},
                {"L_GTE", {{"", [](const EpochRecord& e) { return e.losses.l_gte; }}}},
                {"L_IVR", {{"", [](const EpochRecord& e) { return e.losses.l_ivr; }}}},
                {"total", {{"", [](const EpochRecord& e) { return e.losses.total; }}}}});
}

void write_iou_plot_svg(std::ostream& os, const std::vector<NamedHistory>& runs) {
  write_panels(os, runs,
               {{"mIoU", {{"", [](const EpochRecord& e) { return e.miou; }}}},
                {"CGL IoU", {{"", [](const EpochRecord& e) { return e.cgl_iou; }}}}});
}

// ---------------------------------------------------------------------------
// ablation table

std::vector<AblationRow> ablation_rows(const std::vector<NamedHistory>& runs) {
  std::vector<AblationRow> rows;
  for (const auto& r : runs) {
    if (r.history.epochs.empty()) throw FormatError(r.label + ": history has no epochs");
    AblationRow row;
    row.label = r.label;
    auto flag = [&](double w) { return r.history.has_weights ? (w > 0 ? "on" : "off") : "?"; };
    row.dflb = flag(r.history.weights.beta);
    row.gte = flag(r.history.weights.gamma);
    row.ivr = flag(r.history.weights.delta);
    row.miou = r.history.epochs.back().miou;
    row.cgl_iou = r.history.epochs.back().cgl_iou;
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_markdown(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "| run | DFLB | GTE | IVR | mIoU | CGL IoU |\n";
  s << "|---|:-:|:-:|:-:|--:|--:|\n";
  for (const auto& r : rows) {
    s << "| " << r.label << " | " << r.dflb << " | " << r.gte << " | " << r.ivr << " | "
      << 100.0 * r.miou << " | " << 100.0 * r.cgl_iou << " |\n";
  }
  os << s.str();
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "run,dflb,gte,ivr,miou,cgl_iou\n";
  for (const auto& r : rows) {
    s << r.label << ',' << r.dflb << ',' << r.gte << ',' << r.ivr << ',' << r.miou << ','
      << r.cgl_iou << '\n';
  }
  os << s.str();
}

}  // namespace cgl
