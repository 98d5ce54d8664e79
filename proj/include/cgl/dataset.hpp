#pragma once

// Annotated scenes: COCO-style loading and writing, box rasterisation,
// procedural synthetic scenes with analytic depth, and train/test splits.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cgl/image_io.hpp"
#include "cgl/imaging.hpp"
#include "cgl/random.hpp"

namespace cgl {

enum class Orientation { vertical, horizontal };

/// Axis-aligned box in pixels; (x, y) is the top-left corner.
struct CglBox {
  int x = 0, y = 0, w = 0, h = 0;

  Orientation orientation() const { return h > w ? Orientation::vertical : Orientation::horizontal; }
  long area() const { return static_cast<long>(w) * h; }
  bool operator==(const CglBox&) const = default;
};

enum class SplitTag { unassigned, train, test };

struct AnnotatedScene {
  std::string name;
  RgbImage image;
  std::vector<CglBox> boxes;
  std::optional<DepthMap> depth;
  SplitTag split = SplitTag::unassigned;
  int location_id = 0;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// COCO-style annotations

struct CocoLoadOptions {
  bool load_depth = true;  // read "depth_file" entries when present
};

struct CocoDataset {
  std::vector<AnnotatedScene> scenes;
  std::vector<std::string> warnings;  // one per clipped or dropped box
};

/// Images are resolved relative to the JSON file's directory.
CocoDataset load_coco_annotations(const std::filesystem::path& path,
                                  const CocoLoadOptions& options = {});

/// Writes images/<name>.png, depth/<name>.cgld and annotations.json under `dir`.
void write_coco_dataset(const std::filesystem::path& dir, const std::vector<AnnotatedScene>& scenes);

// ---------------------------------------------------------------------------
// masks

/// Full-resolution rasterisation, boxes must lie inside height x width.
BinaryMask rasterize_boxes(const std::vector<CglBox>& boxes, std::size_t height, std::size_t width);

/// rasterize_boxes followed by the any-in-block reduction by `scale`.
LabelMask boxes_to_mask(const std::vector<CglBox>& boxes, std::size_t height, std::size_t width,
                        std::size_t scale = 4);

/// Clips a box to the image; returns nullopt if nothing is left.
std::optional<CglBox> clip_box(const CglBox& box, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// synthetic scenes

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  int right() const { return x + w; }
  int bottom() const { return y + h; }
};

struct Occluder {
  Rect rect;
  double depth_offset = 1.0;  // occluder depth = background_depth - depth_offset
  bool supported_on_floor = true;
};

struct SyntheticSceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  double background_depth = 10.0;
  std::vector<Occluder> occluders;
  std::vector<Rect> wall_decorations;  // flat paint, no depth change
  int floor_row = 48;                  // first row of the floor
  std::uint64_t palette_seed = 0;
  double target_cgl_fraction = 0.10;
  int band = 8;                  // CGL box thickness across the edge
  double occluder_share = 0.4;   // fraction of each box lying on the occluder
  int max_vertical_extent = 40;  // cap on vertical box height (a standing person)
  int location_id = 0;

  /// Throws DatasetError when the spec cannot be rendered.
  void validate() const;
};

/// Renders the scene and its analytic depth, and emits the CGL boxes implied
/// by the geometry: two vertical boxes on the side edges of every standing
/// (h >= w) occluder, one horizontal box on the top edge of every low (w > h)
/// occluder, none for occluders that are not supported on the floor.
AnnotatedScene generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Just the boxes of generate_synthetic_scene.
std::vector<CglBox> synthetic_boxes(const SyntheticSceneSpec& spec);

/// Draws a random layout for location family `location_id`. Families fix the
/// palette and horizon; the seed varies the layout.
SyntheticSceneSpec sample_scene_spec(int location_id, std::uint64_t seed, std::size_t height = 64,
                                     std::size_t width = 64);

struct SyntheticDatasetOptions {
  std::size_t count = 200;
  std::size_t families = 20;
  std::uint64_t seed = 7;
  std::size_t height = 64;
  std::size_t width = 64;
};

std::vector<AnnotatedScene> generate_synthetic_dataset(const SyntheticDatasetOptions& options);

// ---------------------------------------------------------------------------
// splits

enum class SplitMode { disjoint_locations, partial_overlap };

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& text);

struct DatasetSplit {
  std::vector<AnnotatedScene> train;
  std::vector<AnnotatedScene> test;
};

/// Fraction of test scenes whose location also occurs in train, for
/// partial-overlap mode.
inline constexpr double kPartialOverlapFraction = 0.17;

/// Partitions scenes by location family. Disjoint mode never shares a family
/// between the partitions; partial-overlap mode additionally moves about 17%
/// of the test set's worth of train-family scenes into test.
DatasetSplit split_dataset(std::vector<AnnotatedScene> scenes, SplitMode mode, double ratio,
                           std::uint64_t seed);

/// Fraction of `test` scenes whose location_id appears in `train`.
double location_overlap_fraction(const std::vector<AnnotatedScene>& train,
                                 const std::vector<AnnotatedScene>& test);

}  // namespace cgl
