#include "qaclims/dataset.hpp"

#include "qaclims/image_io.hpp"
#include "qaclims/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace qaclims::data {

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::diamond: return "diamond";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

ShapeKind shape_kind_from_string(const std::string& s) {
  for (auto k : {ShapeKind::disk, ShapeKind::square, ShapeKind::diamond, ShapeKind::triangle})
    if (to_string(k) == s) return k;
  throw FormatError("unknown shape kind '" + s + "'");
}

bool shape_contains(const PlacedShape& s, double y, double x) {
  const double dy = y + 0.5 - s.cy, dx = x + 0.5 - s.cx, r = s.radius;
  switch (s.kind) {
    case ShapeKind::disk: return dy * dy + dx * dx <= r * r;
    case ShapeKind::square: return std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
    case ShapeKind::diamond: return std::abs(dy) + std::abs(dx) <= 1.1 * r;
    case ShapeKind::triangle: return dy >= -r && dy <= 0.75 * r && std::abs(dx) <= (dy + r) * 0.62;
  }
  return false;
}

corpus::SceneDescriptor SyntheticScene::descriptor() const {
  corpus::SceneDescriptor d;
  d.scene = background_texture;
  for (const auto& s : shapes) {
    corpus::SceneDescriptor::Placed p{s.class_id, s.cy, s.cx, 2 * s.radius, s.texture};
    (s.distractor ? d.distractors : d.objects).push_back(p);
  }
  return d;
}

ClassSet SyntheticScene::labels() const {
  ClassSet out;
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    if (mask.data()[i] != 0 && mask.data()[i] != kIgnoreIndex) out.insert(mask.data()[i]);
  return out;
}

namespace {

bool overlaps(const PlacedShape& a, const PlacedShape& b, double margin) {
  return std::hypot(a.cy - b.cy, a.cx - b.cx) < a.radius + b.radius + margin;
}

bool inside(const PlacedShape& s, int canvas) {
  return s.cy - s.radius >= 1 && s.cx - s.radius >= 1 && s.cy + s.radius <= canvas - 1 &&
         s.cx + s.radius <= canvas - 1;
}

Eigen::Vector3d jitter(Eigen::Vector3d base, double value_scale, Rng& rng) {
  base *= value_scale;
  for (int c = 0; c < 3; ++c) base(c) += 0.015 * rng.normal();
  return base.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

SyntheticScene render_scene(const World& world, std::uint64_t seed, const SynthOptions& opts) {
  if (opts.canvas < 32) throw ConfigError("synthetic canvas must be at least 32 pixels");
  Rng rng(seed);
  const int n = opts.canvas;
  SyntheticScene scene;
  scene.height = scene.width = n;

  const int n_objects = (world.num_classes() >= 2 && rng.uniform() < 0.35) ? 2 : 1;
  std::vector<int> classes;
  while (static_cast<int>(classes.size()) < n_objects) {
    const int k = rng.uniform_int(1, world.num_classes());
    if (std::find(classes.begin(), classes.end(), k) == classes.end()) classes.push_back(k);
  }

  const ClassInfo& primary = world.cls(classes.front());
  scene.background_texture =
      rng.uniform() < opts.scene_bias ? primary.preferred_scene : rng.uniform_int(0, World::kScenes - 1);

  const double rmin = n * 0.16, rmax = n * 0.26;
  for (int k : classes) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      PlacedShape s{static_cast<ShapeKind>(rng.uniform_int(0, 3)), k, false, 0, 0, rng.uniform(rmin, rmax),
                    rng.uniform_int(0, 1)};
      s.cy = rng.uniform(s.radius + 1, n - s.radius - 1);
      s.cx = rng.uniform(s.radius + 1, n - s.radius - 1);
      const bool clash = std::any_of(scene.shapes.begin(), scene.shapes.end(),
                                     [&](const PlacedShape& o) { return overlaps(s, o, 3.0); });
      if (!clash) {
        scene.shapes.push_back(s);
        break;
      }
    }
  }

  auto place_distractor = [&](int index, const PlacedShape* near) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      PlacedShape d{rng.uniform() < 0.5 ? ShapeKind::disk : ShapeKind::square, index, true, 0, 0,
                    rng.uniform(n * 0.06, n * 0.1), 0};
      if (near) {
        const double angle = rng.uniform(0, 2 * M_PI);
        const double dist = near->radius + d.radius + rng.uniform(1.0, 4.0);
        d.cy = near->cy + dist * std::sin(angle);
        d.cx = near->cx + dist * std::cos(angle);
      } else {
        d.cy = rng.uniform(d.radius + 1, n - d.radius - 1);
        d.cx = rng.uniform(d.radius + 1, n - d.radius - 1);
      }
      if (!inside(d, n)) continue;
      const bool clash = std::any_of(scene.shapes.begin(), scene.shapes.end(),
                                     [&](const PlacedShape& o) { return overlaps(d, o, 1.0); });
      if (!clash) {
        scene.shapes.push_back(d);
        return;
      }
    }
  };
  const PlacedShape primary_shape = scene.shapes.front();
  if (rng.uniform() < opts.distractor_bias) place_distractor(primary.preferred_distractor, &primary_shape);
  if (rng.uniform() < 0.3) place_distractor(rng.uniform_int(0, World::kDistractors - 1), nullptr);

  // Render: background texture, then shapes on top.
  const auto& concepts = world.concepts();
  const Eigen::Vector3d bg_rgb = concepts[world.scenes()[scene.background_texture].concept_id].rgb();
  const double fy = rng.uniform(0.15, 0.4), fx = rng.uniform(0.15, 0.4), phase = rng.uniform(0, 2 * M_PI);

  scene.image = RasterImage(n, n);
  scene.mask = SegMask::Zero(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      Eigen::Vector3d px;
      const PlacedShape* hit = nullptr;
      for (const auto& s : scene.shapes)
        if (shape_contains(s, y, x)) hit = &s;
      if (!hit) {
        px = jitter(bg_rgb, 1.0 + 0.1 * std::sin(fy * y + fx * x + phase) + 0.05 * rng.normal(), rng);
      } else if (hit->distractor) {
        px = jitter(concepts[world.distractors()[hit->class_id].concept_id].rgb(), 1.0 + 0.05 * rng.normal(), rng);
      } else {
        const double tex = hit->texture == 0 ? 0.12 * std::sin(0.9 * x)                     // stripes
                                             : (((x / 4) + (y / 4)) % 2 == 0 ? 0.1 : -0.1);  // checks
        px = jitter(concepts[world.cls(hit->class_id).concept_id].rgb(), 1.0 + tex + 0.05 * rng.normal(), rng);
        scene.mask(y, x) = static_cast<std::uint8_t>(hit->class_id);
      }
      for (int c = 0; c < 3; ++c) scene.image.rgb[c](y, x) = px(c);
    }
  scene.image = io::quantize8(scene.image);
  return scene;
}

// ---------------------------------------------------------------------------

std::string DatasetManifest::resolve(const std::string& p) const {
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / p).string();
}

std::string DatasetManifest::class_name(ClassId k) const {
  if (k < 0 || k >= static_cast<ClassId>(class_names.size()))
    throw ConfigError("class id " + std::to_string(k) + " not in the class table");
  return class_names[k];
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["format"] = "qaclims-manifest";
  j["version"] = DatasetManifest::kVersion;
  j["class_names"] = m.class_names;
  j["synthetic_classes"] = m.synthetic_classes;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    json r = {{"id", e.id}, {"image", e.image}, {"labels", std::vector<int>(e.labels.begin(), e.labels.end())}};
    if (!e.mask.empty()) r["mask"] = e.mask;
    if (!e.descriptor.empty()) r["descriptor"] = e.descriptor;
    j["entries"].push_back(std::move(r));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(1) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  try {
    json j;
    in >> j;
    if (j.value("format", "") != "qaclims-manifest") throw FormatError("not a dataset manifest: " + path);
    if (j.at("version").get<int>() != DatasetManifest::kVersion) throw VersionError("unsupported manifest version");
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.synthetic_classes = j.value("synthetic_classes", 0);
    for (const auto& r : j.at("entries")) {
      ManifestEntry e;
      e.id = r.at("id").get<std::string>();
      e.image = r.at("image").get<std::string>();
      for (int k : r.at("labels").get<std::vector<int>>()) e.labels.insert(k);
      e.mask = r.value("mask", "");
      e.descriptor = r.value("descriptor", "");
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path + ": " + e.what());
  }
  for (const auto& e : m.entries) {
    for (const auto* p : {&e.image, &e.mask, &e.descriptor})
      if (!p->empty() && !fs::exists(m.resolve(*p)))
        throw IoError("manifest " + path + " references missing file " + m.resolve(*p));
    for (ClassId k : e.labels)
      if (k < 1 || k >= static_cast<ClassId>(m.class_names.size()))
        throw FormatError("entry '" + e.id + "' has label " + std::to_string(k) + " outside the class table");
  }
  return m;
}

namespace {

json descriptor_json(const SyntheticScene& s, const World& world) {
  json j;
  j["scene"] = s.background_texture;
  j["scene_name"] = world.scenes()[s.background_texture].name;
  j["objects"] = json::array();
  j["distractors"] = json::array();
  for (const auto& p : s.shapes) {
    json r = {{"id", p.class_id},
              {"shape", to_string(p.kind)},
              {"cy", p.cy},
              {"cx", p.cx},
              {"size", 2 * p.radius},
              {"variant", p.texture}};
    r["name"] = p.distractor ? world.distractors()[p.class_id].name : world.cls(p.class_id).label;
    (p.distractor ? j["distractors"] : j["objects"]).push_back(std::move(r));
  }
  return j;
}

}  // namespace

corpus::SceneDescriptor load_descriptor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene descriptor " + path);
  try {
    json j;
    in >> j;
    corpus::SceneDescriptor d;
    d.scene = j.at("scene").get<int>();
    for (const char* key : {"objects", "distractors"})
      for (const auto& r : j.at(key)) {
        corpus::SceneDescriptor::Placed p{r.at("id").get<int>(), r.at("cy").get<double>(), r.at("cx").get<double>(),
                                          r.at("size").get<double>(), r.value("variant", 0)};
        (std::string(key) == "objects" ? d.objects : d.distractors).push_back(p);
      }
    return d;
  } catch (const json::exception& e) {
    throw FormatError("malformed scene descriptor " + path + ": " + e.what());
  }
}

DatasetManifest generate_synthetic(int n_images, int n_classes, std::uint64_t seed, const std::string& out_dir,
                                   const SynthOptions& opts) {
  if (n_images < 1) throw ConfigError("need at least one image");
  if (n_classes < 2 || n_classes > World::kMaxClasses)
    throw ConfigError("synthetic class count must be in [2, " + std::to_string(World::kMaxClasses) + "]");
  const World world(n_classes);

  std::error_code ec;
  for (const char* sub : {"images", "masks", "scenes"}) fs::create_directories(fs::path(out_dir) / sub, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir);

  DatasetManifest m;
  m.base_dir = out_dir;
  m.synthetic_classes = n_classes;
  m.class_names.push_back("background");
  for (const auto& n : world.class_names()) m.class_names.push_back(n);

  for (int i = 0; i < n_images; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", i);
    const std::uint64_t image_seed = fnv1a(&i, sizeof(i), seed * 0x9e3779b97f4a7c15ull + 1);
    const SyntheticScene scene = render_scene(world, image_seed, opts);

    ManifestEntry e;
    e.id = id;
    e.image = std::string("images/") + id + ".png";
    e.mask = std::string("masks/") + id + ".png";
    e.descriptor = std::string("scenes/") + id + ".json";
    e.labels = scene.labels();
    io::write_png(m.resolve(e.image), scene.image);
    io::write_index_png(m.resolve(e.mask), scene.mask);
    std::ofstream d(m.resolve(e.descriptor), std::ios::binary);
    if (!d) throw IoError("cannot write " + m.resolve(e.descriptor));
    d << descriptor_json(scene, world).dump(1) << '\n';
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

const std::vector<std::string>& voc_class_names() {
  static const std::vector<std::string> names = {
      "background", "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",
      "car",        "cat",       "chair",   "cow",   "diningtable", "dog",    "horse",
      "motorbike",  "person",    "potted plant", "sheep", "sofa",   "train",  "tvmonitor"};
  return names;
}

DatasetManifest ingest_voc_style(const std::string& root, const std::string& split) {
  const fs::path base(root);
  const fs::path split_file = base / "ImageSets" / "Segmentation" / (split + ".txt");
  std::ifstream in(split_file);
  if (!in) throw IoError("missing split file " + split_file.string());

  DatasetManifest m;
  m.base_dir = root;
  m.class_names = voc_class_names();
  if (std::ifstream cls(base / "classes.txt"); cls) {
    m.class_names.clear();
    for (std::string line; std::getline(cls, line);)
      if (!line.empty()) m.class_names.push_back(line);
  }

  for (std::string id; in >> id;) {
    ManifestEntry e;
    e.id = id;
    for (const char* ext : {".jpg", ".png", ".jpeg"}) {
      const auto p = fs::path("JPEGImages") / (id + ext);
      if (fs::exists(base / p)) {
        e.image = p.string();
        break;
      }
    }
    if (e.image.empty()) throw IoError("no image for '" + id + "' under " + (base / "JPEGImages").string());

    const auto mask_rel = fs::path("SegmentationClass") / (id + ".png");
    if (fs::exists(base / mask_rel)) e.mask = mask_rel.string();

    if (std::ifstream lf(base / "ImageLabels" / (id + ".txt")); lf) {
      for (int k; lf >> k;) e.labels.insert(k);
    } else {
      if (e.mask.empty()) throw IoError("no mask or label file for '" + id + "'");
      const SegMask mask = io::read_index_png((base / mask_rel).string());
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        const auto v = mask.data()[i];
        if (v != 0 && v != kIgnoreIndex) e.labels.insert(v);
      }
    }
    for (ClassId k : e.labels)
      if (k >= static_cast<ClassId>(m.class_names.size()))
        throw FormatError("image '" + id + "' has class index " + std::to_string(k) + " outside the class table");
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Sample s;
    s.id = e.id;
    s.image = io::read_image(m.resolve(e.image));
    s.labels = e.labels;
    if (!e.mask.empty()) {
      s.gt = io::read_index_png(m.resolve(e.mask));
      if (s.gt->rows() != s.image.height() || s.gt->cols() != s.image.width())
        throw DimensionError("mask of '" + e.id + "' does not match its image");
    }
    if (!e.descriptor.empty()) s.descriptor = load_descriptor(m.resolve(e.descriptor));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace qaclims::data
