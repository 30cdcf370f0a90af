#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace qaclims {

/// The closed vocabulary shared by the synthetic scene generator, the mock VQA
/// backend and the mock encoders. Every nameable thing is a "concept" with a
/// colour signature, so that a masked image region and a text can be compared
/// in one space without model weights.
struct ConceptInfo {
  enum class Kind { object_class, scene, distractor };

  Kind kind;
  std::string name;
  double hue;        // degrees in [0, 360)
  double lightness;  // grey level at the centre of the chroma circle
  double chroma;     // radius of the chroma circle
  /// Point at angle `hue` on a circle around grey in the plane orthogonal to
  /// (1, 1, 1); equal hue steps give equal colour angles.
  Eigen::Vector3d rgb() const;
};

struct ClassInfo {
  std::string label;
  std::vector<std::string> fine_grained;  // one per texture variant
  std::vector<std::string> aliases;
  int preferred_scene;
  int preferred_distractor;
  int concept_id;
};

struct SceneInfo {
  std::string name;         // "What scene ..."
  std::string environment;  // "What enviroment ..."
  std::string place;        // "What place ..."
  std::string ground;       // surrounding-object answer when nothing else is near
  int concept_id;
};

struct DistractorInfo {
  std::string name;
  int concept_id;
};

class World {
 public:
  static constexpr int kMaxClasses = 16;
  static constexpr int kScenes = 4;
  static constexpr int kDistractors = 4;

  /// Deterministic world with `n_classes` object classes (class ids 1..n).
  explicit World(int n_classes);

  int num_classes() const { return static_cast<int>(classes_.size()); }
  const ClassInfo& cls(int class_id) const;  // 1-based
  const std::vector<ClassInfo>& classes() const { return classes_; }
  const std::vector<SceneInfo>& scenes() const { return scenes_; }
  const std::vector<DistractorInfo>& distractors() const { return distractors_; }
  const std::vector<ConceptInfo>& concepts() const { return concepts_; }

  std::vector<std::string> class_names() const;

  /// Concept a lowercase word refers to, if any. Class labels, fine-grained
  /// names, aliases and every scene/distractor word are in the lexicon.
  std::optional<int> concept_of_word(const std::string& word) const;

 private:
  std::vector<ClassInfo> classes_;
  std::vector<SceneInfo> scenes_;
  std::vector<DistractorInfo> distractors_;
  std::vector<ConceptInfo> concepts_;
  std::vector<std::pair<std::string, int>> lexicon_;
};

/// Lowercase whitespace/punctuation tokenizer used by the text side.
std::vector<std::string> tokenize(const std::string& text);

}  // namespace qaclims
