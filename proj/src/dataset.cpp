#include "cgl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cgl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// masks

std::optional<CglBox> clip_box(const CglBox& box, std::size_t height, std::size_t width) {
  const int x0 = std::max(box.x, 0);
  const int y0 = std::max(box.y, 0);
  const int x1 = std::min(box.x + box.w, static_cast<int>(width));
  const int y1 = std::min(box.y + box.h, static_cast<int>(height));
  if (x1 <= x0 || y1 <= y0) return std::nullopt;
  return CglBox{x0, y0, x1 - x0, y1 - y0};
}

BinaryMask rasterize_boxes(const std::vector<CglBox>& boxes, std::size_t height,
                           std::size_t width) {
  BinaryMask mask(height, width);
  for (const auto& b : boxes) {
    if (b.w <= 0 || b.h <= 0) {
      throw std::invalid_argument("degenerate box with zero area");
    }
    if (b.x < 0 || b.y < 0 || b.x + b.w > static_cast<int>(width) ||
        b.y + b.h > static_cast<int>(height)) {
      throw std::invalid_argument("box lies outside the image");
    }
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x) mask.at(y, x) = 1;
  }
  return mask;
}

LabelMask boxes_to_mask(const std::vector<CglBox>& boxes, std::size_t height, std::size_t width,
                        std::size_t scale) {
  return downsample_any(rasterize_boxes(boxes, height, width), scale);
}

// ---------------------------------------------------------------------------
// COCO

namespace {

std::string box_text(double x, double y, double w, double h) {
  std::ostringstream os;
  os << '[' << x << ", " << y << ", " << w << ", " << h << ']';
  return os.str();
}

}  // namespace

CocoDataset load_coco_annotations(const std::filesystem::path& path,
                                  const CocoLoadOptions& options) {
  json doc;
  {
    auto in = io::open_for_read(path);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DatasetError(path.string() + ": malformed JSON: " + e.what());
    }
  }
  const auto base = path.parent_path();
  CocoDataset out;

  try {
    int cgl_category = -1;
    if (doc.contains("categories")) {
      const auto& cats = doc.at("categories");
      if (cats.size() > 1) throw DatasetError(path.string() + ": expected a single category");
      if (cats.size() == 1) {
        const auto name = cats[0].at("name").get<std::string>();
        if (name != "cgl") {
          throw DatasetError(path.string() + ": unexpected category '" + name + "'");
        }
        cgl_category = cats[0].at("id").get<int>();
      }
    }

    std::map<long long, std::size_t> index;
    for (const auto& im : doc.value("images", json::array())) {
      AnnotatedScene scene;
      const auto id = im.at("id").get<long long>();
      const auto file = im.at("file_name").get<std::string>();
      const auto h = im.at("height").get<std::size_t>();
      const auto w = im.at("width").get<std::size_t>();
      const auto image_path = base / file;
      if (!std::filesystem::exists(image_path)) {
        throw DatasetError(path.string() + ": missing image file " + image_path.string());
      }
      scene.image = read_png_rgb(image_path);
      if (scene.image.height != h || scene.image.width != w) {
        throw DatasetError(image_path.string() + ": size differs from annotation record");
      }
      scene.name = std::filesystem::path(file).stem().string();
      scene.location_id = im.value("location_id", 0);
      if (options.load_depth && im.contains("depth_file")) {
        scene.depth = read_depth(base / im.at("depth_file").get<std::string>());
        if (scene.depth->height != h || scene.depth->width != w) {
          throw DatasetError(scene.name + ": depth map size differs from image");
        }
      }
      if (!index.emplace(id, out.scenes.size()).second) {
        throw DatasetError(path.string() + ": duplicate image id " + std::to_string(id));
      }
      out.scenes.push_back(std::move(scene));
    }

    for (const auto& an : doc.value("annotations", json::array())) {
      const auto image_id = an.at("image_id").get<long long>();
      const auto category = an.at("category_id").get<int>();
      if (category != cgl_category) {
        throw DatasetError(path.string() + ": annotation with category id " +
                           std::to_string(category) + " is not the CGL category");
      }
      const auto it = index.find(image_id);
      if (it == index.end()) {
        throw DatasetError(path.string() + ": annotation refers to unknown image " +
                           std::to_string(image_id));
      }
      const auto& bbox = an.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4) {
        throw DatasetError(path.string() + ": bbox must be [x, y, w, h]");
      }
      const double bx = bbox[0].get<double>(), by = bbox[1].get<double>();
      const double bw = bbox[2].get<double>(), bh = bbox[3].get<double>();
      if (!(bw > 0.0 && bh > 0.0)) {
        throw DatasetError(path.string() + ": degenerate bbox " + box_text(bx, by, bw, bh));
      }
      auto& scene = out.scenes[it->second];
      const int x0 = static_cast<int>(std::lround(bx));
      const int y0 = static_cast<int>(std::lround(by));
      const CglBox raw{x0, y0, static_cast<int>(std::lround(bx + bw)) - x0,
                       static_cast<int>(std::lround(by + bh)) - y0};
      const auto clipped = clip_box(raw, scene.image.height, scene.image.width);
      if (!clipped) {
        out.warnings.push_back(scene.name + ": dropped bbox " + box_text(bx, by, bw, bh) +
                               " outside the image");
        continue;
      }
      if (!(*clipped == raw)) {
        out.warnings.push_back(scene.name + ": clipped bbox " + box_text(bx, by, bw, bh) +
                               " to " +
                               box_text(clipped->x, clipped->y, clipped->w, clipped->h));
      }
      scene.boxes.push_back(*clipped);
    }
  } catch (const json::exception& e) {
    throw DatasetError(path.string() + ": malformed annotation record: " + e.what());
  }
  return out;
}

void write_coco_dataset(const std::filesystem::path& dir,
                        const std::vector<AnnotatedScene>& scenes) {
  std::filesystem::create_directories(dir / "images");
  json images = json::array(), annotations = json::array();
  long long ann_id = 1;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const std::string image_file = "images/" + s.name + ".png";
    write_png_rgb(dir / image_file, s.image);
    json rec = {{"id", i + 1},
                {"file_name", image_file},
                {"height", s.image.height},
                {"width", s.image.width},
                {"location_id", s.location_id}};
    if (s.depth) {
      std::filesystem::create_directories(dir / "depth");
      const std::string depth_file = "depth/" + s.name + ".cgld";
      write_depth_raster(dir / depth_file, *s.depth);
      rec["depth_file"] = depth_file;
    }
    images.push_back(std::move(rec));
    for (const auto& b : s.boxes) {
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", 1},
                             {"bbox", {b.x, b.y, b.w, b.h}},
                             {"area", b.area()},
                             {"iscrowd", 0}});
    }
  }
  json doc = {{"images", std::move(images)},
              {"annotations", std::move(annotations)},
              {"categories", json::array({{{"id", 1}, {"name", "cgl"}}})}};
  auto out = io::open_for_write(dir / "annotations.json");
  out << doc.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// synthetic scenes

void SyntheticSceneSpec::validate() const {
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    throw DatasetError("synthetic image size must be a positive multiple of 4");
  }
  if (!(background_depth > 0.0)) throw DatasetError("background depth must be positive");
  if (band <= 0 || !(occluder_share > 0.0 && occluder_share < 1.0)) {
    throw DatasetError("invalid CGL band geometry");
  }
  auto inside = [&](const Rect& r) {
    return r.w > 0 && r.h > 0 && r.x >= 0 && r.y >= 0 && r.right() <= static_cast<int>(width) &&
           r.bottom() <= static_cast<int>(height);
  };
  for (const auto& o : occluders) {
    if (!inside(o.rect)) throw DatasetError("occluder overflows the image");
    if (!(o.depth_offset > 0.0 && o.depth_offset < background_depth)) {
      throw DatasetError("occluder must be strictly closer than the background");
    }
  }
  for (const auto& r : wall_decorations) {
    if (!inside(r)) throw DatasetError("decoration overflows the image");
  }
}

std::vector<CglBox> synthetic_boxes(const SyntheticSceneSpec& spec) {
  const int off = static_cast<int>(std::lround((1.0 - spec.occluder_share) * spec.band));
  const int on = spec.band - off;
  std::vector<CglBox> boxes;
  for (const auto& o : spec.occluders) {
    if (!o.supported_on_floor) continue;
    const Rect& r = o.rect;
    std::vector<CglBox> raw;
    if (r.h >= r.w) {
      const int bh = std::min(r.h, spec.max_vertical_extent);
      raw.push_back({r.x - off, r.bottom() - bh, spec.band, bh});
      raw.push_back({r.right() - on, r.bottom() - bh, spec.band, bh});
    } else {
      raw.push_back({r.x, r.y - off, r.w, spec.band});
    }
    for (const auto& b : raw) {
      if (auto c = clip_box(b, spec.height, spec.width)) boxes.push_back(*c);
    }
  }
  return boxes;
}

namespace {

struct Color {
  double r, g, b;
};

Color random_color(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

Color jitter(const Color& c, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  return {std::clamp(c.r + u(rng), 0.0, 255.0), std::clamp(c.g + u(rng), 0.0, 255.0),
          std::clamp(c.b + u(rng), 0.0, 255.0)};
}

struct FamilyStyle {
  Color wall, floor, occluder;
  int floor_row;
};

FamilyStyle family_style(std::uint64_t palette_seed, std::size_t height) {
  std::mt19937_64 rng(palette_seed);
  FamilyStyle s;
  s.wall = random_color(rng, 60, 230);
  s.floor = random_color(rng, 40, 200);
  s.occluder = random_color(rng, 20, 235);
  std::uniform_int_distribution<int> row(static_cast<int>(height * 5 / 8),
                                         static_cast<int>(height * 13 / 16));
  s.floor_row = row(rng);
  return s;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

AnnotatedScene generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(seed, spec.palette_seed));
  const FamilyStyle style = family_style(spec.palette_seed, spec.height);
  const Color wall = jitter(style.wall, rng, 20);
  const Color floor = jitter(style.floor, rng, 20);

  const int h = static_cast<int>(spec.height), w = static_cast<int>(spec.width);
  std::vector<Color> canvas(spec.height * spec.width);
  for (int y = 0; y < h; ++y) {
    const bool is_floor = y >= spec.floor_row;
    const double shade = is_floor ? 0.85 + 0.15 * (y - spec.floor_row) / std::max(1, h - spec.floor_row)
                                  : 1.0 - 0.1 * y / std::max(1, spec.floor_row);
    const Color base = is_floor ? floor : wall;
    for (int x = 0; x < w; ++x) canvas[y * w + x] = {base.r * shade, base.g * shade, base.b * shade};
  }

  // Flat wall paint in the occluder palette: colour edges without any depth change.
  for (const auto& r : spec.wall_decorations) {
    const Color c = jitter(style.occluder, rng, 45);
    for (int y = r.y; y < r.bottom(); ++y)
      for (int x = r.x; x < r.right(); ++x) canvas[y * w + x] = c;
  }

  DepthMap depth(spec.height, spec.width, spec.background_depth);

  // Far to near so closer occluders win where rectangles overlap.
  std::vector<const Occluder*> order;
  for (const auto& o : spec.occluders) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const Occluder* a, const Occluder* b) { return a->depth_offset < b->depth_offset; });
  for (const Occluder* o : order) {
    const Rect& r = o->rect;
    const Color c = jitter(style.occluder, rng, 45);
    if (o->supported_on_floor) {
      // Contact shadow on the floor along the base.
      for (int y = r.bottom(); y < std::min(h, r.bottom() + 2); ++y)
        for (int x = std::max(0, r.x - 1); x < std::min(w, r.right() + 3); ++x) {
          auto& px = canvas[y * w + x];
          px = {px.r * 0.55, px.g * 0.55, px.b * 0.55};
        }
    }
    const int side = std::max(1, r.w / 6);
    for (int y = r.y; y < r.bottom(); ++y) {
      const double shade = 1.0 - 0.25 * (y - r.y) / std::max(1, r.h);
      for (int x = r.x; x < r.right(); ++x) {
        const double face = x >= r.right() - side ? 0.7 : 1.0;
        canvas[y * w + x] = {c.r * shade * face, c.g * shade * face, c.b * shade * face};
        depth.at(y, x) = spec.background_depth - o->depth_offset;
      }
    }
  }

  AnnotatedScene scene;
  scene.image = RgbImage(spec.height, spec.width);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    scene.image.pixels[3 * i + 0] = to_u8(canvas[i].r + noise(rng));
    scene.image.pixels[3 * i + 1] = to_u8(canvas[i].g + noise(rng));
    scene.image.pixels[3 * i + 2] = to_u8(canvas[i].b + noise(rng));
  }
  scene.depth = std::move(depth);
  scene.boxes = synthetic_boxes(spec);
  scene.location_id = spec.location_id;
  return scene;
}

namespace {

bool spans_overlap(int a0, int a1, int b0, int b1, int margin) {
  return a0 < b1 + margin && b0 < a1 + margin;
}

}  // namespace

SyntheticSceneSpec sample_scene_spec(int location_id, std::uint64_t seed, std::size_t height,
                                     std::size_t width) {
  SyntheticSceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.location_id = location_id;
  spec.palette_seed = mix_seed(0x5ce7e5eedULL, static_cast<std::uint64_t>(location_id));
  const FamilyStyle style = family_style(spec.palette_seed, height);
  spec.floor_row = style.floor_row;
  // ~100 px on images several hundred px wide, scaled to this resolution.
  spec.band = std::max(4, static_cast<int>(std::lround(width * 10.0 / 64.0)));
  spec.max_vertical_extent = static_cast<int>(height * 5 / 8);

  std::mt19937_64 rng(mix_seed(seed, spec.palette_seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int W = static_cast<int>(width), H = static_cast<int>(height);
  const double s = width / 64.0;
  const int margin = static_cast<int>(std::lround(0.6 * spec.band)) + 1;
  std::vector<Rect> placed;

  auto try_place = [&](int rw, int rh, int y) -> std::optional<Rect> {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const int lo = margin, hi = W - margin - rw;
      if (hi < lo) return std::nullopt;
      const Rect r{uniform_int(lo, hi), y, rw, rh};
      bool clash = false;
      for (const auto& p : placed) clash = clash || spans_overlap(r.x, r.right(), p.x, p.right(), spec.band);
      if (!clash) return r;
    }
    return std::nullopt;
  };

  // Supported occluders: count chosen so the expected CGL share is ~10%.
  const int supported = u01(rng) < 0.65 ? 1 : 2;
  for (int i = 0; i < supported; ++i) {
    const bool standing = u01(rng) < 0.42;
    int rw, rh;
    if (standing) {
      rw = static_cast<int>(std::lround(uniform_int(7, 13) * s));
      rh = static_cast<int>(std::lround(uniform_int(20, 34) * s));
    } else {
      rw = static_cast<int>(std::lround(uniform_int(18, 30) * s));
      rh = static_cast<int>(std::lround(uniform_int(7, 12) * s));
    }
    const int bottom = std::min(H, spec.floor_row + uniform_int(2, std::max(2, (H - spec.floor_row) / 2)));
    const int top = std::max(spec.band, bottom - rh);
    if (auto r = try_place(rw, bottom - top, top)) {
      placed.push_back(*r);
      spec.occluders.push_back({*r, 2.0 + 6.0 * u01(rng), true});
    }
  }

  // Occasional floating occluder (wall cabinet): depth edges but no CGL.
  if (u01(rng) < 0.35) {
    const int rw = static_cast<int>(std::lround(uniform_int(10, 18) * s));
    const int rh = static_cast<int>(std::lround(uniform_int(7, 12) * s));
    const int max_top = spec.floor_row - rh - static_cast<int>(6 * s);
    if (max_top >= 2) {
      if (auto r = try_place(rw, rh, uniform_int(2, max_top))) {
        placed.push_back(*r);
        spec.occluders.push_back({*r, 1.5 + 4.0 * u01(rng), false});
      }
    }
  }

  // Flat wall decorations: colour edges, no depth edges.
  const int decorations = uniform_int(0, 2);
  for (int i = 0; i < decorations; ++i) {
    const int rw = static_cast<int>(std::lround(uniform_int(6, 16) * s));
    const int rh = static_cast<int>(std::lround(uniform_int(6, 16) * s));
    const int max_top = spec.floor_row - rh - 2;
    if (max_top < 1 || W - rw - 1 < 1) continue;
    spec.wall_decorations.push_back({uniform_int(1, W - rw - 1), uniform_int(1, max_top), rw, rh});
  }
  return spec;
}

std::vector<AnnotatedScene> generate_synthetic_dataset(const SyntheticDatasetOptions& options) {
  if (options.families == 0) throw DatasetError("need at least one location family");
  std::vector<AnnotatedScene> scenes;
  scenes.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    const int family = static_cast<int>(i % options.families);
    const std::uint64_t scene_seed = mix_seed(options.seed, i);
    const auto spec = sample_scene_spec(family, scene_seed, options.height, options.width);
    auto scene = generate_synthetic_scene(spec, scene_seed);
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i;
    scene.name = name.str();
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// splits

std::string to_string(SplitMode mode) {
  return mode == SplitMode::disjoint_locations ? "disjoint" : "partial_overlap";
}

SplitMode parse_split_mode(const std::string& text) {
  if (text == "disjoint" || text == "disjoint_locations" || text == "split1") {
    return SplitMode::disjoint_locations;
  }
  if (text == "partial_overlap" || text == "partial-overlap" || text == "split2") {
    return SplitMode::partial_overlap;
  }
  throw std::invalid_argument("unknown split mode '" + text + "'");
}

DatasetSplit split_dataset(std::vector<AnnotatedScene> scenes, SplitMode mode, double ratio,
                           std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DatasetError("split ratio must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> families;
  for (std::size_t i = 0; i < scenes.size(); ++i) families[scenes[i].location_id].push_back(i);
  if (families.size() < 2) {
    throw DatasetError("need at least two location families to split, found " +
                       std::to_string(families.size()));
  }

  std::vector<int> ids;
  for (const auto& [id, _] : families) ids.push_back(id);
  std::mt19937_64 rng(mix_seed(seed, 0x5b117ULL));
  std::shuffle(ids.begin(), ids.end(), rng);

  const double n = static_cast<double>(scenes.size());
  // Disjoint test share; partial overlap fills the rest of the test quota
  // from train families.
  const double test_share =
      mode == SplitMode::disjoint_locations ? 1.0 - ratio : (1.0 - ratio) * (1.0 - kPartialOverlapFraction);
  const double target_test = test_share * n;

  std::set<int> test_families;
  std::size_t test_count = 0;
  for (int id : ids) {
    if (test_families.size() + 1 >= families.size()) break;  // keep one family for train
    const std::size_t next = test_count + families[id].size();
    if (test_count > 0 && std::abs(static_cast<double>(next) - target_test) >=
                              std::abs(static_cast<double>(test_count) - target_test)) {
      break;
    }
    test_families.insert(id);
    test_count = next;
  }

  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    (test_families.count(scenes[i].location_id) ? test_idx : train_idx).push_back(i);
  }

  if (mode == SplitMode::partial_overlap) {
    const auto extra = static_cast<std::size_t>(std::lround(
        kPartialOverlapFraction / (1.0 - kPartialOverlapFraction) * static_cast<double>(test_count)));
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    // Keep at least one scene of every train family in train.
    std::set<int> kept;
    std::vector<std::size_t> movable, stay;
    for (std::size_t i : train_idx) {
      if (kept.insert(scenes[i].location_id).second) stay.push_back(i);
      else movable.push_back(i);
    }
    const std::size_t moved = std::min(extra, movable.size());
    test_idx.insert(test_idx.end(), movable.begin(), movable.begin() + moved);
    stay.insert(stay.end(), movable.begin() + moved, movable.end());
    train_idx = std::move(stay);
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
  }

  DatasetSplit out;
  for (std::size_t i : train_idx) {
    scenes[i].split = SplitTag::train;
    out.train.push_back(std::move(scenes[i]));
  }
  for (std::size_t i : test_idx) {
    scenes[i].split = SplitTag::test;
    out.test.push_back(std::move(scenes[i]));
  }
  return out;
}

double location_overlap_fraction(const std::vector<AnnotatedScene>& train,
                                 const std::vector<AnnotatedScene>& test) {
  if (test.empty()) return 0.0;
  std::set<int> seen;
  for (const auto& s : train) seen.insert(s.location_id);
  std::size_t shared = 0;
  for (const auto& s : test) shared += seen.count(s.location_id);
  return static_cast<double>(shared) / static_cast<double>(test.size());
}

}  // namespace cgl
