#pragma once

#include "qaclims/corpus.hpp"
#include "qaclims/types.hpp"
#include "qaclims/world.hpp"

#include <optional>
#include <string>
#include <vector>

namespace qaclims::data {

enum class ShapeKind { disk, square, diamond, triangle };
std::string to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& s);

struct PlacedShape {
  ShapeKind kind;
  int class_id;   // object class (1-based), or distractor index when `distractor`
  bool distractor;
  double cy, cx;  // centre, pixels
  double radius;
  int texture;    // fill texture variant
};

/// A generated scene together with the ground truth derived from it.
struct SyntheticScene {
  int height = 0, width = 0;
  int background_texture = 0;  // scene index in the world
  std::vector<PlacedShape> shapes;
  RasterImage image;  // already 8-bit quantised
  SegMask mask;       // union of object supports; distractors are background

  corpus::SceneDescriptor descriptor() const;
  ClassSet labels() const;
};

struct SynthOptions {
  int canvas = 64;
  double scene_bias = 0.8;       // probability a scene uses its primary class's preferred background
  double distractor_bias = 0.8;  // probability the preferred distractor sits next to the primary object
};

/// True when pixel centre (y + .5, x + .5) lies inside the shape.
bool shape_contains(const PlacedShape& s, double y, double x);

SyntheticScene render_scene(const World& world, std::uint64_t seed, const SynthOptions& opts = {});

struct ManifestEntry {
  std::string id;
  std::string image;  // paths as written in the manifest (relative to its directory)
  ClassSet labels;
  std::string mask;        // empty if absent
  std::string descriptor;  // empty if absent
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  std::vector<std::string> class_names;  // index 0 is background
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory relative paths resolve against; not serialised
  int synthetic_classes = 0;  // world size for synthetic sets, 0 otherwise

  std::string resolve(const std::string& p) const;
  std::string class_name(ClassId k) const;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
/// Loads and validates: every referenced file exists, labels are in the class table.
DatasetManifest load_manifest(const std::string& path);

DatasetManifest generate_synthetic(int n_images, int n_classes, std::uint64_t seed, const std::string& out_dir,
                                   const SynthOptions& opts = {});

const std::vector<std::string>& voc_class_names();

/// PASCAL-VOC layout: ImageSets/Segmentation/<split>.txt, JPEGImages/<id>.jpg
/// (or .png), SegmentationClass/<id>.png. Optional ImageLabels/<id>.txt
/// (whitespace-separated class ids) overrides labels derived from the mask;
/// optional classes.txt replaces the 21 VOC names.
DatasetManifest ingest_voc_style(const std::string& root, const std::string& split = "train");

struct Sample {
  std::string id;
  RasterImage image;
  ClassSet labels;
  std::optional<SegMask> gt;
  std::optional<corpus::SceneDescriptor> descriptor;
};

std::vector<Sample> load_samples(const DatasetManifest& m);

corpus::SceneDescriptor load_descriptor(const std::string& path);

}  // namespace qaclims::data
