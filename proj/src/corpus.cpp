#include "qaclims/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

namespace qaclims::corpus {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::size_t count_placeholders(const std::string& pattern) {
  std::size_t n = 0;
  for (auto pos = pattern.find(kPlaceholder); pos != std::string::npos;
       pos = pattern.find(kPlaceholder, pos + 1))
    ++n;
  return n;
}

void dedup_in_place(std::vector<std::pair<std::string, TextSource>>& entries) {
  std::vector<std::pair<std::string, TextSource>> out;
  for (auto& e : entries) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const auto& o) { return o.first == e.first; });
    if (!seen) out.push_back(std::move(e));
  }
  entries = std::move(out);
}

TextSource source_of(QuestionKind k) {
  switch (k) {
    case QuestionKind::surrounding_object: return TextSource::surrounding_object;
    case QuestionKind::scene: return TextSource::scene;
    case QuestionKind::fine_grained: return TextSource::fine_grained;
    case QuestionKind::alias: return TextSource::alias;
  }
  return TextSource::fallback;
}

std::vector<std::pair<std::string, TextSource>> fg_entries(
    const std::vector<std::pair<std::string, TextSource>>& raw, const std::string& label, const PostprocessOptions& opts) {
  std::vector<std::pair<std::string, TextSource>> out;
  for (const auto& [answer, src] : raw) {
    const std::string a = trim(answer);
    if (a.empty()) continue;
    out.emplace_back(as_prompt(contains_word(a, label) ? a : a + " " + label), src);
  }
  out.emplace_back(as_prompt(label), TextSource::category);
  if (opts.dedup) dedup_in_place(out);
  return out;
}

std::vector<std::pair<std::string, TextSource>> bg_entries(
    const std::vector<std::pair<std::string, TextSource>>& raw, const std::string& label, const PostprocessOptions& opts) {
  std::vector<std::pair<std::string, TextSource>> out;
  const std::string label_lc = lower(trim(label));
  for (const auto& [answer, src] : raw) {
    const std::string a = trim(answer);
    if (a.empty() || lower(a) == label_lc) continue;
    out.emplace_back(as_prompt(a), src);
  }
  if (opts.dedup) dedup_in_place(out);
  if (out.empty()) out.emplace_back(as_prompt("no " + label), TextSource::fallback);
  return out;
}

std::vector<std::pair<std::string, TextSource>> tagged(const std::vector<std::string>& answers, TextSource src) {
  std::vector<std::pair<std::string, TextSource>> out;
  for (const auto& a : answers) out.emplace_back(a, src);
  return out;
}

std::vector<std::string> texts_of(const std::vector<std::pair<std::string, TextSource>>& e) {
  std::vector<std::string> out;
  for (const auto& [t, s] : e) out.push_back(t);
  return out;
}

}  // namespace

std::string to_string(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::surrounding_object: return "surrounding_object";
    case QuestionKind::scene: return "scene";
    case QuestionKind::fine_grained: return "fine_grained";
    case QuestionKind::alias: return "alias";
  }
  return "?";
}

QuestionKind question_kind_from_string(const std::string& s) {
  for (auto k : {QuestionKind::surrounding_object, QuestionKind::scene, QuestionKind::fine_grained, QuestionKind::alias})
    if (to_string(k) == s) return k;
  throw TemplateError("unknown question kind '" + s + "'");
}

std::string to_string(TextSource s) {
  switch (s) {
    case TextSource::category: return "category";
    case TextSource::fine_grained: return "fine_grained";
    case TextSource::alias: return "alias";
    case TextSource::surrounding_object: return "surrounding_object";
    case TextSource::scene: return "scene";
    case TextSource::fallback: return "fallback";
  }
  return "?";
}

TextSource text_source_from_string(const std::string& s) {
  for (auto v : {TextSource::category, TextSource::fine_grained, TextSource::alias, TextSource::surrounding_object,
                 TextSource::scene, TextSource::fallback})
    if (to_string(v) == s) return v;
  throw FormatError("unknown text source '" + s + "'");
}

void QuestionTemplate::validate() const {
  const auto n = count_placeholders(pattern);
  if (n != 1)
    throw TemplateError("template must contain exactly one {class} placeholder, found " + std::to_string(n) + ": \"" +
                        pattern + "\"");
}

const std::vector<QuestionTemplate>& default_templates() {
  using K = QuestionKind;
  static const std::vector<QuestionTemplate> templates = {
      {K::surrounding_object, "What is above the {class}?"},
      {K::surrounding_object, "What is under the {class}?"},
      {K::surrounding_object, "What is behind the {class}?"},
      {K::surrounding_object, "What is around the {class}?"},
      {K::surrounding_object, "What is next to the {class}?"},
      {K::surrounding_object, "What is the left side of {class}?"},
      {K::surrounding_object, "What is the right side of {class}?"},
      {K::scene, "What scene is the {class} in?"},
      {K::scene, "What enviroment is the {class} in?"},  // sic
      {K::scene, "What place is the {class} in?"},
      {K::fine_grained, "What kind of {class} is in the photo?"},
      {K::fine_grained, "What type of {class} is in the photo?"},
      {K::alias, "What is this {class} also called?"},
      {K::alias, "What is this {class} usually called?"},
      {K::alias, "What is another word for this {class}?"},
      {K::alias, "What is another name for this {class}?"},
  };
  return templates;
}

TemplateSet load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("malformed template file " + path + ": " + e.what());
  }
  TemplateSet set;
  try {
    set.version = j.at("version").get<std::string>();
    for (const auto& t : j.at("templates")) {
      QuestionTemplate q{question_kind_from_string(t.at("kind").get<std::string>()), t.at("pattern").get<std::string>()};
      q.validate();
      set.templates.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed template file " + path + ": " + e.what());
  }
  if (set.templates.empty()) throw FormatError("template file " + path + " lists no templates");
  return set;
}

void save_templates(const TemplateSet& set, const std::string& path) {
  json j;
  j["version"] = set.version;
  j["templates"] = json::array();
  for (const auto& t : set.templates) j["templates"].push_back({{"kind", to_string(t.kind)}, {"pattern", t.pattern}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write template file " + path);
  out << j.dump(2) << '\n';
}

std::string fill_template(const QuestionTemplate& tmpl, const std::string& class_label) {
  if (class_label.empty()) throw TemplateError("class label must be non-empty");
  // An already filled question passes through unchanged.
  if (count_placeholders(tmpl.pattern) == 0) return tmpl.pattern;
  tmpl.validate();
  std::string out = tmpl.pattern;
  const auto pos = out.find(kPlaceholder);
  out.replace(pos, std::char_traits<char>::length(kPlaceholder), class_label);
  return out;
}

// ---------------------------------------------------------------------------

MockVqaBackend::MockVqaBackend(const World& world, std::vector<QuestionTemplate> templates, std::uint64_t seed)
    : world_(world), templates_(std::move(templates)), seed_(seed) {
  for (const auto& t : templates_) t.validate();
}

void MockVqaBackend::register_scene(std::uint64_t image_hash, SceneDescriptor descriptor) {
  scenes_[image_hash] = std::move(descriptor);
}

std::optional<MockVqaBackend::Parsed> MockVqaBackend::parse(const std::string& question) const {
  std::map<QuestionKind, std::size_t> seen;
  for (const auto& t : templates_) {
    const std::size_t index = seen[t.kind]++;
    const auto pos = t.pattern.find(kPlaceholder);
    const std::string prefix = t.pattern.substr(0, pos);
    const std::string suffix = t.pattern.substr(pos + std::char_traits<char>::length(kPlaceholder));
    if (question.size() <= prefix.size() + suffix.size()) continue;
    if (question.compare(0, prefix.size(), prefix) != 0) continue;
    if (question.compare(question.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    Parsed p{t.kind, index, t.pattern, 0,
             question.substr(prefix.size(), question.size() - prefix.size() - suffix.size())};
    for (int id = 1; id <= world_.num_classes(); ++id)
      if (world_.cls(id).label == p.class_label) p.class_id = id;
    return p;
  }
  return std::nullopt;
}

std::string MockVqaBackend::answer(const RasterImage& image, const std::string& question) {
  const auto parsed = parse(question);
  if (!parsed) return {};
  const auto h = image_hash(image);
  if (const auto it = scenes_.find(h); it != scenes_.end()) return answer_from_descriptor(it->second, *parsed);
  return answer_from_hash(h, *parsed);
}

std::string MockVqaBackend::answer_from_descriptor(const SceneDescriptor& d, const Parsed& q) const {
  const SceneInfo& scene = world_.scenes().at(static_cast<std::size_t>(d.scene));
  const SceneDescriptor::Placed* target = nullptr;
  for (const auto& o : d.objects)
    if (o.id == q.class_id && (!target || o.size > target->size)) target = &o;
  if (!target) return {};
  const ClassInfo& info = world_.cls(q.class_id);

  switch (q.kind) {
    case QuestionKind::surrounding_object: {
      enum class Dir { any, up, down, left, right } dir = Dir::any;
      if (q.pattern.find("above") != std::string::npos) dir = Dir::up;
      else if (q.pattern.find("under") != std::string::npos) dir = Dir::down;
      else if (q.pattern.find("left") != std::string::npos) dir = Dir::left;
      else if (q.pattern.find("right") != std::string::npos) dir = Dir::right;

      const SceneDescriptor::Placed* best = nullptr;
      double best_dist = 0;
      for (const auto& x : d.distractors) {
        const double dy = x.cy - target->cy, dx = x.cx - target->cx;
        bool ok = true;
        switch (dir) {
          case Dir::up: ok = dy < 0 && std::abs(dy) >= 0.5 * std::abs(dx); break;
          case Dir::down: ok = dy > 0 && std::abs(dy) >= 0.5 * std::abs(dx); break;
          case Dir::left: ok = dx < 0 && std::abs(dx) >= 0.5 * std::abs(dy); break;
          case Dir::right: ok = dx > 0 && std::abs(dx) >= 0.5 * std::abs(dy); break;
          case Dir::any: break;
        }
        const double dist = std::hypot(dy, dx);
        if (!ok || dist > 1.5 * (target->size + x.size)) continue;
        if (!best || dist < best_dist) best = &x, best_dist = dist;
      }
      if (best) return world_.distractors().at(static_cast<std::size_t>(best->id)).name;
      return scene.ground;
    }
    case QuestionKind::scene:
      if (q.pattern.find("enviroment") != std::string::npos || q.pattern.find("environment") != std::string::npos)
        return scene.environment;
      if (q.pattern.find("place") != std::string::npos) return scene.place;
      return scene.name;
    case QuestionKind::fine_grained:
      return info.fine_grained.at(static_cast<std::size_t>(target->variant) % info.fine_grained.size());
    case QuestionKind::alias:
      // Models often just repeat the label once the obvious aliases run out.
      return q.index_in_kind < info.aliases.size() ? info.aliases[q.index_in_kind] : info.label;
  }
  return {};
}

std::string MockVqaBackend::answer_from_hash(std::uint64_t image_hash, const Parsed& q) const {
  std::uint64_t h = fnv1a(&seed_, sizeof(seed_));
  h = fnv1a(&image_hash, sizeof(image_hash), h);
  h = fnv1a(to_string(q.kind), h);
  h = fnv1a(q.class_label, h);
  h = fnv1a(&q.index_in_kind, sizeof(q.index_in_kind), h);
  if (h % 8 == 0) return {};  // a fraction of questions go unanswered

  std::vector<std::string> vocab;
  if (is_background(q.kind)) {
    for (const auto& s : world_.scenes())
      for (const auto& w : {s.name, s.environment, s.place, s.ground}) vocab.push_back(w);
    for (const auto& x : world_.distractors()) vocab.push_back(x.name);
  } else if (q.class_id > 0) {
    const auto& info = world_.cls(q.class_id);
    vocab = q.kind == QuestionKind::fine_grained ? info.fine_grained : info.aliases;
  } else {
    vocab = {"large", "small", "old", "young", "wild", "common"};
  }
  return vocab[(h >> 3) % vocab.size()];
}

std::string CachingVqaBackend::answer(const RasterImage& image, const std::string& question) {
  const auto key = std::make_pair(image_hash(image), question);
  {
    std::lock_guard lock(mutex_);
    if (const auto it = cache_.find(key); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  std::string a = inner_->answer(image, question);
  std::lock_guard lock(mutex_);
  ++misses_;
  cache_.emplace(key, a);
  return a;
}

void CachingVqaBackend::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) return;  // a missing cache file is an empty cache
  json j;
  try {
    in >> j;
    std::lock_guard lock(mutex_);
    for (const auto& e : j.at("entries"))
      cache_[{std::stoull(e.at("image").get<std::string>(), nullptr, 16), e.at("question").get<std::string>()}] =
          e.at("answer").get<std::string>();
  } catch (const std::exception& e) {
    throw FormatError("malformed VQA cache " + path + ": " + e.what());
  }
}

void CachingVqaBackend::save(const std::string& path) const {
  json j;
  j["backend_id"] = inner_->id();
  j["entries"] = json::array();
  std::lock_guard lock(mutex_);
  for (const auto& [k, a] : cache_) j["entries"].push_back({{"image", hex64(k.first)}, {"question", k.second}, {"answer", a}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write VQA cache " + path);
  out << j.dump() << '\n';
}

// ---------------------------------------------------------------------------

RawAnswers ask_all(VqaBackend& backend, const RasterImage& image, const std::string& class_label,
                   const std::vector<QuestionTemplate>& templates) {
  if (templates.empty()) throw TemplateError("no question templates given");
  RawAnswers out;
  for (const auto& t : templates) {
    const std::string question = fill_template(t, class_label);
    std::string a;
    try {
      a = backend.answer(image, question);
    } catch (const std::exception&) {
      a.clear();
    }
    out[t.kind].push_back(std::move(a));
  }
  return out;
}

std::string as_prompt(const std::string& answer) { return "a photo of " + answer; }

bool contains_word(const std::string& text, const std::string& label) {
  const auto words = tokenize(text);
  const auto needle = tokenize(label);
  if (needle.empty() || needle.size() > words.size()) return false;
  return std::search(words.begin(), words.end(), needle.begin(), needle.end()) != words.end();
}

std::vector<std::string> postprocess_fg(const std::vector<std::string>& raw_answers, const std::string& class_label,
                                        const PostprocessOptions& opts) {
  return texts_of(fg_entries(tagged(raw_answers, TextSource::fine_grained), class_label, opts));
}

std::vector<std::string> postprocess_bg(const std::vector<std::string>& raw_answers, const std::string& class_label,
                                        const PostprocessOptions& opts) {
  return texts_of(bg_entries(tagged(raw_answers, TextSource::surrounding_object), class_label, opts));
}

ClassCorpus build_class_corpus(ClassId class_id, const std::string& class_label, const RawAnswers& raw,
                               const PostprocessOptions& opts) {
  if (class_label.empty()) throw TemplateError("class label must be non-empty");
  std::vector<std::pair<std::string, TextSource>> fg_raw, bg_raw;
  for (auto kind : {QuestionKind::fine_grained, QuestionKind::alias, QuestionKind::surrounding_object, QuestionKind::scene}) {
    const auto it = raw.find(kind);
    if (it == raw.end()) continue;
    auto& dst = is_background(kind) ? bg_raw : fg_raw;
    for (const auto& a : it->second) dst.emplace_back(a, source_of(kind));
  }

  const auto fg = fg_entries(fg_raw, class_label, opts);
  auto bg = bg_entries(bg_raw, class_label, opts);
  // A negative identical to a positive would contradict itself.
  std::erase_if(bg, [&](const auto& e) {
    return e.second != TextSource::fallback &&
           std::any_of(fg.begin(), fg.end(), [&](const auto& f) { return f.first == e.first; });
  });
  if (bg.empty()) bg.emplace_back(as_prompt("no " + class_label), TextSource::fallback);

  ClassCorpus c;
  c.class_id = class_id;
  c.class_label = class_label;
  for (const auto& [t, s] : fg) c.fg_texts.push_back(t), c.fg_sources.push_back(s);
  for (const auto& [t, s] : bg) c.bg_texts.push_back(t), c.bg_sources.push_back(s);
  return c;
}

ClassCorpus build_baseline_corpus(const std::string& class_label, ClassId class_id) {
  if (class_label.empty()) throw TemplateError("class label must be non-empty");
  ClassCorpus c;
  c.class_id = class_id;
  c.class_label = class_label;
  c.fg_texts = {as_prompt(class_label)};
  c.fg_sources = {TextSource::category};
  c.bg_texts = {as_prompt("no " + class_label)};
  c.bg_sources = {TextSource::fallback};
  return c;
}

ClassCorpus restrict_corpus(const ClassCorpus& c, const std::set<TextSource>& keep) {
  ClassCorpus out;
  out.class_id = c.class_id;
  out.class_label = c.class_label;
  for (std::size_t i = 0; i < c.fg_texts.size(); ++i)
    if (c.fg_sources[i] == TextSource::category || keep.count(c.fg_sources[i]))
      out.fg_texts.push_back(c.fg_texts[i]), out.fg_sources.push_back(c.fg_sources[i]);
  for (std::size_t i = 0; i < c.bg_texts.size(); ++i)
    if (keep.count(c.bg_sources[i]))
      out.bg_texts.push_back(c.bg_texts[i]), out.bg_sources.push_back(c.bg_sources[i]);
  if (out.bg_texts.empty()) {
    out.bg_texts = {as_prompt("no " + c.class_label)};
    out.bg_sources = {TextSource::fallback};
  }
  return out;
}

const ClassCorpus* CorpusStore::find(const std::string& image_id, ClassId class_id) const {
  const auto it = records.find({image_id, class_id});
  return it == records.end() ? nullptr : &it->second;
}

const ClassCorpus& CorpusStore::at(const std::string& image_id, ClassId class_id) const {
  if (const auto* c = find(image_id, class_id)) return *c;
  throw Error("no corpus record for image '" + image_id + "', class " + std::to_string(class_id));
}

void save_corpus(const CorpusStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path);
  json header = {{"format", "qaclims-corpus"},
                 {"schema_version", CorpusStore::kSchemaVersion},
                 {"template_version", store.template_version},
                 {"backend_id", store.backend_id},
                 {"records", store.records.size()}};
  out << header.dump() << '\n';
  for (const auto& [key, c] : store.records) {
    json r;
    r["image_id"] = key.first;
    r["class_id"] = key.second;
    r["class_label"] = c.class_label;
    r["fg_texts"] = c.fg_texts;
    r["bg_texts"] = c.bg_texts;
    r["template_version"] = store.template_version;
    r["backend_id"] = store.backend_id;
    std::vector<std::string> fs, bs;
    for (auto s : c.fg_sources) fs.push_back(to_string(s));
    for (auto s : c.bg_sources) bs.push_back(to_string(s));
    r["fg_sources"] = fs;
    r["bg_sources"] = bs;
    out << r.dump() << '\n';
  }
}

CorpusStore load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty corpus file " + path);

  CorpusStore store;
  std::size_t expected = 0;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "qaclims-corpus") throw FormatError("not a corpus file: " + path);
    const int version = header.at("schema_version").get<int>();
    if (version != CorpusStore::kSchemaVersion)
      throw VersionError("corpus schema version " + std::to_string(version) + " unsupported (expected " +
                         std::to_string(CorpusStore::kSchemaVersion) + ")");
    store.template_version = header.at("template_version").get<std::string>();
    store.backend_id = header.at("backend_id").get<std::string>();
    expected = header.at("records").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("malformed corpus header in " + path + ": " + e.what());
  }

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      ClassCorpus c;
      const std::string image_id = r.at("image_id").get<std::string>();
      c.class_id = r.at("class_id").get<int>();
      c.class_label = r.at("class_label").get<std::string>();
      c.fg_texts = r.at("fg_texts").get<std::vector<std::string>>();
      c.bg_texts = r.at("bg_texts").get<std::vector<std::string>>();
      if (r.at("template_version").get<std::string>() != store.template_version ||
          r.at("backend_id").get<std::string>() != store.backend_id)
        throw FormatError("record metadata disagrees with header");
      for (const auto& s : r.at("fg_sources")) c.fg_sources.push_back(text_source_from_string(s.get<std::string>()));
      for (const auto& s : r.at("bg_sources")) c.bg_sources.push_back(text_source_from_string(s.get<std::string>()));
      if (c.fg_texts.empty() || c.bg_texts.empty() || c.fg_sources.size() != c.fg_texts.size() ||
          c.bg_sources.size() != c.bg_texts.size())
        throw FormatError("text lists empty or misaligned with their sources");
      if (!store.records.emplace(std::make_pair(image_id, c.class_id), std::move(c)).second)
        throw FormatError("duplicate record");
    } catch (const json::exception& e) {
      throw FormatError("malformed corpus record at " + path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("malformed corpus record at " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (store.records.size() != expected)
    throw FormatError("corpus file " + path + " declares " + std::to_string(expected) + " records, found " +
                      std::to_string(store.records.size()));
  return store;
}

CorpusStore restrict_store(const CorpusStore& store, const std::set<TextSource>& keep) {
  CorpusStore out;
  out.template_version = store.template_version;
  out.backend_id = store.backend_id;
  for (const auto& [k, c] : store.records) out.records.emplace(k, restrict_corpus(c, keep));
  return out;
}

CorpusStore baseline_store(const CorpusStore& store) {
  CorpusStore out;
  out.template_version = store.template_version;
  out.backend_id = "baseline";
  for (const auto& [k, c] : store.records) out.records.emplace(k, build_baseline_corpus(c.class_label, c.class_id));
  return out;
}

CorpusStore generate_corpus(VqaBackend& backend, const std::vector<CorpusRequest>& requests,
                            const std::function<std::string(ClassId)>& class_label, const TemplateSet& templates,
                            const PostprocessOptions& opts, unsigned max_threads) {
  if (templates.templates.empty()) throw TemplateError("no question templates given");
  if (max_threads == 0) max_threads = std::max(1u, std::thread::hardware_concurrency());

  using PerImage = std::vector<ClassCorpus>;
  auto work = [&](const CorpusRequest& req) {
    PerImage out;
    for (ClassId k : req.labels) {
      const std::string label = class_label(k);
      out.push_back(build_class_corpus(k, label, ask_all(backend, *req.image, label, templates.templates), opts));
    }
    return out;
  };

  std::vector<PerImage> results(requests.size());
  for (std::size_t begin = 0; begin < requests.size(); begin += max_threads) {
    const std::size_t end = std::min(requests.size(), begin + max_threads);
    std::vector<std::future<PerImage>> futures;
    for (std::size_t i = begin; i < end; ++i) futures.push_back(std::async(std::launch::async, work, std::cref(requests[i])));
    for (std::size_t i = begin; i < end; ++i) results[i] = futures[i - begin].get();
  }

  CorpusStore store;
  store.template_version = templates.version;
  store.backend_id = backend.id();
  for (std::size_t i = 0; i < requests.size(); ++i)
    for (auto& c : results[i]) store.records.emplace(std::make_pair(requests[i].image_id, c.class_id), std::move(c));
  return store;
}

}  // namespace qaclims::corpus
