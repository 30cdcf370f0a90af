#include "qaclims/world.hpp"

#include "qaclims/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace qaclims {

namespace {

struct ClassSeed {
  const char* label;
  std::vector<std::string> fine_grained;
  std::vector<std::string> aliases;
};

const std::vector<ClassSeed>& class_seeds() {
  static const std::vector<ClassSeed> seeds = {
      {"cat", {"tabby", "siamese"}, {"kitty", "feline", "kitten"}},
      {"boat", {"sailing", "fishing"}, {"vessel", "ship", "dinghy"}},
      {"train", {"passenger", "freight"}, {"locomotive", "railcar", "tram"}},
      {"dog", {"terrier", "poodle"}, {"puppy", "canine", "hound"}},
      {"bird", {"sparrow", "parrot"}, {"fowl", "songbird", "avian"}},
      {"car", {"sports", "vintage"}, {"automobile", "vehicle", "sedan"}},
      {"horse", {"racing", "draft"}, {"pony", "stallion", "mare"}},
      {"sheep", {"merino", "lamb"}, {"ewe", "ram", "flock"}},
      {"cow", {"dairy", "highland"}, {"cattle", "bull", "heifer"}},
      {"bus", {"school", "double-decker"}, {"coach", "minibus", "shuttle"}},
      {"bottle", {"glass", "plastic"}, {"flask", "jug", "vial"}},
      {"chair", {"wooden", "folding"}, {"seat", "stool", "armchair"}},
      {"person", {"woman", "child"}, {"human", "individual", "people"}},
      {"aeroplane", {"jet", "propeller"}, {"airplane", "aircraft", "airliner"}},
      {"bicycle", {"mountain", "racing"}, {"bike", "cycle", "pushbike"}},
      {"potted plant", {"fern", "cactus"}, {"houseplant", "flowerpot", "planter"}},
  };
  return seeds;
}

const std::vector<SceneInfo>& scene_seeds() {
  static const std::vector<SceneInfo> seeds = {
      {"meadow", "grassland", "field", "grass", -1},
      {"lake", "waterside", "shore", "water", -1},
      {"desert", "dunes", "wasteland", "sand", -1},
      {"snowfield", "tundra", "glacier", "snow", -1},
  };
  return seeds;
}

const std::vector<std::string>& distractor_seeds() {
  static const std::vector<std::string> seeds = {"rock", "bush", "fence", "bucket"};
  return seeds;
}

}  // namespace

Eigen::Vector3d ConceptInfo::rgb() const {
  const Eigen::Vector3d e1 = Eigen::Vector3d(2, -1, -1) / std::sqrt(6.0);
  const Eigen::Vector3d e2 = Eigen::Vector3d(0, 1, -1) / std::sqrt(2.0);
  const double h = hue * std::numbers::pi / 180.0;
  return Eigen::Vector3d::Constant(lightness) + chroma * (std::cos(h) * e1 + std::sin(h) * e2);
}

World::World(int n_classes) {
  if (n_classes < 1 || n_classes > kMaxClasses)
    throw ConfigError("class count must be in [1, " + std::to_string(kMaxClasses) + "], got " +
                      std::to_string(n_classes));

  // Hues are spread evenly over every concept in use; classes, scenes and
  // distractors are interleaved so no two classes are hue neighbours.
  const int total = n_classes + kScenes + kDistractors;
  std::vector<ConceptInfo::Kind> order;
  {
    int c = 0, s = 0, d = 0;
    while (c < n_classes || s < kScenes || d < kDistractors) {
      if (c < n_classes) order.push_back(ConceptInfo::Kind::object_class), ++c;
      if (s < kScenes) order.push_back(ConceptInfo::Kind::scene), ++s;
      if (d < kDistractors) order.push_back(ConceptInfo::Kind::distractor), ++d;
    }
  }

  int ci = 0, si = 0, di = 0;
  for (int slot = 0; slot < total; ++slot) {
    ConceptInfo info_c;
    info_c.kind = order[slot];
    info_c.hue = 360.0 * slot / total;
    info_c.lightness = 0.45;
    info_c.chroma = 0.55;
    const int id = static_cast<int>(concepts_.size());
    switch (info_c.kind) {
      case ConceptInfo::Kind::object_class: {
        const auto& seed = class_seeds()[ci];
        info_c.name = seed.label;
        ClassInfo info{seed.label, seed.fine_grained, seed.aliases, ci % kScenes, ci % kDistractors, id};
        classes_.push_back(std::move(info));
        ++ci;
        break;
      }
      case ConceptInfo::Kind::scene: {
        SceneInfo info = scene_seeds()[si];
        info.concept_id = id;
        info_c.name = info.name;
        scenes_.push_back(std::move(info));
        ++si;
        break;
      }
      case ConceptInfo::Kind::distractor: {
        info_c.name = distractor_seeds()[di];
        distractors_.push_back({info_c.name, id});
        ++di;
        break;
      }
    }
    concepts_.push_back(std::move(info_c));
  }

  for (const auto& c : classes_) {
    for (const auto& w : tokenize(c.label)) lexicon_.emplace_back(w, c.concept_id);
    for (const auto& w : c.fine_grained) lexicon_.emplace_back(w, c.concept_id);
    for (const auto& w : c.aliases) lexicon_.emplace_back(w, c.concept_id);
  }
  for (const auto& s : scenes_)
    for (const auto& w : {s.name, s.environment, s.place, s.ground}) lexicon_.emplace_back(w, s.concept_id);
  for (const auto& d : distractors_) lexicon_.emplace_back(d.name, d.concept_id);
}

const ClassInfo& World::cls(int class_id) const {
  if (class_id < 1 || class_id > num_classes())
    throw ConfigError("class id " + std::to_string(class_id) + " out of range");
  return classes_[class_id - 1];
}

std::vector<std::string> World::class_names() const {
  std::vector<std::string> names;
  for (const auto& c : classes_) names.push_back(c.label);
  return names;
}

std::optional<int> World::concept_of_word(const std::string& word) const {
  // "racing" is shared by two classes; the first registration wins.
  for (const auto& [w, c] : lexicon_)
    if (w == word) return c;
  return std::nullopt;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || ch == '-') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t image_hash(const RasterImage& image) {
  std::uint64_t h = fnv1a(std::string("img"));
  const std::int64_t dims[2] = {image.height(), image.width()};
  h = fnv1a(dims, sizeof(dims), h);
  for (const auto& c : image.rgb) h = fnv1a(c.data(), sizeof(double) * c.size(), h);
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace qaclims
