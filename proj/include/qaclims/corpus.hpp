#pragma once

#include "qaclims/types.hpp"
#include "qaclims/world.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace qaclims::corpus {

enum class QuestionKind { surrounding_object, scene, fine_grained, alias };

std::string to_string(QuestionKind kind);
QuestionKind question_kind_from_string(const std::string& s);
inline bool is_background(QuestionKind k) {
  return k == QuestionKind::surrounding_object || k == QuestionKind::scene;
}

inline constexpr const char* kPlaceholder = "{class}";

struct QuestionTemplate {
  QuestionKind kind;
  std::string pattern;

  /// Throws TemplateError unless the pattern holds exactly one placeholder.
  void validate() const;
  bool operator==(const QuestionTemplate&) const = default;
};

/// Identifier written into every corpus record produced from the default set.
inline constexpr const char* kDefaultTemplateVersion = "qape-10bg-6fg-v1";

/// The 10 background and 6 foreground templates, in table order.
const std::vector<QuestionTemplate>& default_templates();

struct TemplateSet {
  std::string version;
  std::vector<QuestionTemplate> templates;
};

TemplateSet load_templates(const std::string& path);
void save_templates(const TemplateSet& set, const std::string& path);

/// Substitutes the label for the placeholder. A pattern without a placeholder
/// is returned as is, so filling twice equals filling once; more than one
/// placeholder is a TemplateError.
std::string fill_template(const QuestionTemplate& tmpl, const std::string& class_label);

// ---------------------------------------------------------------------------
// VQA backends
// ---------------------------------------------------------------------------

class VqaBackend {
 public:
  virtual ~VqaBackend() = default;
  /// Answer text; empty means "no answer". Implementations must be
  /// deterministic for identical inputs within a run.
  virtual std::string answer(const RasterImage& image, const std::string& question) = 0;
  virtual std::string id() const = 0;
};

/// Ground truth the mock backend can read for synthetic images.
struct SceneDescriptor {
  struct Placed {
    int id;          // class id for objects, distractor index for distractors
    double cy, cx;   // centre, pixels
    double size;     // bounding extent, pixels
    int variant = 0; // texture variant (objects only)
  };
  int scene = 0;
  std::vector<Placed> objects;
  std::vector<Placed> distractors;
};

/// Deterministic stand-in for a VQA model. Questions are matched back to the
/// template they were filled from. For images registered with a scene
/// descriptor the answers are read from the descriptor; any other image gets a
/// token chosen by hashing (image content, question kind, class label) into
/// the world vocabulary.
class MockVqaBackend final : public VqaBackend {
 public:
  MockVqaBackend(const World& world, std::vector<QuestionTemplate> templates, std::uint64_t seed = 0);

  void register_scene(std::uint64_t image_hash, SceneDescriptor descriptor);

  std::string answer(const RasterImage& image, const std::string& question) override;
  std::string id() const override { return "mock-v1"; }

 private:
  struct Parsed {
    QuestionKind kind;
    std::size_t index_in_kind;
    std::string pattern;
    int class_id;  // 0 when the label is unknown to the world
    std::string class_label;
  };
  std::optional<Parsed> parse(const std::string& question) const;
  std::string answer_from_descriptor(const SceneDescriptor& d, const Parsed& q) const;
  std::string answer_from_hash(std::uint64_t image_hash, const Parsed& q) const;

  const World& world_;
  std::vector<QuestionTemplate> templates_;
  std::uint64_t seed_;
  std::unordered_map<std::uint64_t, SceneDescriptor> scenes_;
};

/// Caches answers by (image hash, question text). Thread-safe.
class CachingVqaBackend final : public VqaBackend {
 public:
  explicit CachingVqaBackend(std::shared_ptr<VqaBackend> inner) : inner_(std::move(inner)) {}

  std::string answer(const RasterImage& image, const std::string& question) override;
  std::string id() const override { return inner_->id(); }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  void load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::shared_ptr<VqaBackend> inner_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::uint64_t, std::string>, std::string> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// ---------------------------------------------------------------------------
// Question answering and post-processing
// ---------------------------------------------------------------------------

/// Raw answers, one per template, grouped by kind in template order.
using RawAnswers = std::map<QuestionKind, std::vector<std::string>>;

RawAnswers ask_all(VqaBackend& backend, const RasterImage& image, const std::string& class_label,
                   const std::vector<QuestionTemplate>& templates);

struct PostprocessOptions {
  bool dedup = false;
};

std::string as_prompt(const std::string& answer);

/// True when `label` occurs in `text` as a case-insensitive run of whole words.
bool contains_word(const std::string& text, const std::string& label);

std::vector<std::string> postprocess_fg(const std::vector<std::string>& raw_answers, const std::string& class_label,
                                        const PostprocessOptions& opts = {});
std::vector<std::string> postprocess_bg(const std::vector<std::string>& raw_answers, const std::string& class_label,
                                        const PostprocessOptions& opts = {});

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

/// Where a corpus entry came from. Used to build restricted corpora.
enum class TextSource { category, fine_grained, alias, surrounding_object, scene, fallback };
std::string to_string(TextSource s);
TextSource text_source_from_string(const std::string& s);

struct ClassCorpus {
  ClassId class_id = 0;
  std::string class_label;
  std::vector<std::string> fg_texts;
  std::vector<std::string> bg_texts;
  std::vector<TextSource> fg_sources;
  std::vector<TextSource> bg_sources;

  bool operator==(const ClassCorpus&) const = default;
};

ClassCorpus build_class_corpus(ClassId class_id, const std::string& class_label, const RawAnswers& raw,
                               const PostprocessOptions& opts = {});

ClassCorpus build_baseline_corpus(const std::string& class_label, ClassId class_id = 0);

/// Keep only entries whose source is in `keep`. The category entry is always
/// kept; an emptied BG list falls back to "a photo of no {class}".
ClassCorpus restrict_corpus(const ClassCorpus& c, const std::set<TextSource>& keep);

struct CorpusStore {
  static constexpr int kSchemaVersion = 1;

  std::map<std::pair<std::string, ClassId>, ClassCorpus> records;
  std::string template_version = kDefaultTemplateVersion;
  std::string backend_id;

  const ClassCorpus& at(const std::string& image_id, ClassId class_id) const;
  const ClassCorpus* find(const std::string& image_id, ClassId class_id) const;
  bool operator==(const CorpusStore&) const = default;
};

void save_corpus(const CorpusStore& store, const std::string& path);
CorpusStore load_corpus(const std::string& path);

CorpusStore restrict_store(const CorpusStore& store, const std::set<TextSource>& keep);
CorpusStore baseline_store(const CorpusStore& store);

struct CorpusRequest {
  std::string image_id;
  const RasterImage* image;
  ClassSet labels;
};

/// Runs every template for every (image, present class). Images are dispatched
/// concurrently; per-image template order is preserved.
CorpusStore generate_corpus(VqaBackend& backend, const std::vector<CorpusRequest>& requests,
                            const std::function<std::string(ClassId)>& class_label,
                            const TemplateSet& templates, const PostprocessOptions& opts = {},
                            unsigned max_threads = 0);

}  // namespace qaclims::corpus
