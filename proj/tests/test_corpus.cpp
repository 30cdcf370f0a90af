#include "doctest.h"
#include "support.hpp"

#include "qaclims/corpus.hpp"
#include "qaclims/dataset.hpp"
#include "qaclims/pipeline.hpp"

#include <algorithm>
#include <atomic>

using namespace qaclims;
using namespace qaclims::corpus;

namespace {

// Answers with a fixed string, or with the question's kind when `echo_kind`.
class FixedBackend final : public VqaBackend {
 public:
  explicit FixedBackend(std::string a) : answer_(std::move(a)) {}
  std::string answer(const RasterImage&, const std::string& q) override {
    ++calls;
    if (answer_ == "<question>") return q;
    return answer_;
  }
  std::string id() const override { return "fixed"; }
  std::atomic<int> calls{0};

 private:
  std::string answer_;
};

// Answers "glass" to surrounding-object questions, "kitchen" to scene
// questions, nothing otherwise.
class KitchenBackend final : public VqaBackend {
 public:
  std::string answer(const RasterImage&, const std::string& q) override {
    if (q.find("scene") != std::string::npos) return "kitchen";
    if (q.find("kind") != std::string::npos || q.find("type") != std::string::npos) return "";
    if (q.find("called") != std::string::npos || q.find("word") != std::string::npos ||
        q.find("name") != std::string::npos)
      return "";
    if (q.find("place") != std::string::npos || q.find("enviroment") != std::string::npos) return "";
    return "glass";
  }
  std::string id() const override { return "kitchen"; }
};

RasterImage tiny_image(double v = 0.5) {
  RasterImage img(4, 4);
  for (auto& c : img.rgb) c.setConstant(v);
  return img;
}

bool contains_ci(std::string hay, std::string needle) {
  std::transform(hay.begin(), hay.end(), hay.begin(), ::tolower);
  std::transform(needle.begin(), needle.end(), needle.begin(), ::tolower);
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_SUITE("templates") {
  TEST_CASE("fill_template substitutes the label") {
    CHECK(fill_template({QuestionKind::surrounding_object, "What is around the {class}?"}, "person") ==
          "What is around the person?");
    CHECK(fill_template({QuestionKind::fine_grained, "What type of {class} is this?"}, "train") ==
          "What type of train is this?");
    CHECK(fill_template({QuestionKind::alias, "{class}"}, "cat") == "cat");
    CHECK(fill_template({QuestionKind::scene, "What scene is the {class} in?"}, "potted plant") ==
          "What scene is the potted plant in?");
  }

  TEST_CASE("filling twice equals filling once") {
    for (const auto& t : default_templates()) {
      const std::string once = fill_template(t, "dog");
      CHECK(fill_template({t.kind, once}, "sheep") == once);
    }
  }

  TEST_CASE("bad templates and labels are rejected") {
    CHECK_THROWS_AS(fill_template({QuestionKind::scene, "{class} and {class}"}, "cat"), TemplateError);
    CHECK_THROWS_AS(fill_template({QuestionKind::scene, "What is {class}?"}, ""), TemplateError);
    CHECK_THROWS_AS(QuestionTemplate({QuestionKind::scene, "no placeholder"}).validate(), TemplateError);
  }

  TEST_CASE("default table has 7 + 3 background and 2 + 4 foreground templates") {
    std::map<QuestionKind, int> n;
    for (const auto& t : default_templates()) {
      CHECK_NOTHROW(t.validate());
      ++n[t.kind];
    }
    CHECK(n[QuestionKind::surrounding_object] == 7);
    CHECK(n[QuestionKind::scene] == 3);
    CHECK(n[QuestionKind::fine_grained] == 2);
    CHECK(n[QuestionKind::alias] == 4);
  }

  TEST_CASE("template file round-trip") {
    testing::TempDir dir("templates");
    const TemplateSet set{"v-test", default_templates()};
    save_templates(set, dir / "t.json");
    const auto back = load_templates(dir / "t.json");
    CHECK(back.version == "v-test");
    CHECK(back.templates == set.templates);
  }

  TEST_CASE("template file with a broken pattern fails to load") {
    testing::TempDir dir("templates-bad");
    testing::spit(dir / "t.json", R"({"version":"x","templates":[{"kind":"scene","pattern":"nothing here"}]})");
    CHECK_THROWS_AS(load_templates(dir / "t.json"), TemplateError);
    testing::spit(dir / "u.json", R"({"version":"x","templates":[{"kind":"colour","pattern":"{class}"}]})");
    CHECK_THROWS(load_templates(dir / "u.json"));
  }
}

TEST_SUITE("question answering") {
  TEST_CASE("ask_all groups one answer per template by kind") {
    FixedBackend b("<question>");
    const auto raw = ask_all(b, tiny_image(), "cat", default_templates());
    CHECK(raw.at(QuestionKind::surrounding_object).size() == 7);
    CHECK(raw.at(QuestionKind::scene).size() == 3);
    CHECK(raw.at(QuestionKind::fine_grained).size() == 2);
    CHECK(raw.at(QuestionKind::alias).size() == 4);
    // order within a kind follows the table
    CHECK(raw.at(QuestionKind::scene)[1] == "What enviroment is the cat in?");
    CHECK(b.calls == 16);
  }

  TEST_CASE("an empty backend yields empty answers") {
    FixedBackend b("");
    const auto raw = ask_all(b, tiny_image(), "cat", default_templates());
    for (const auto& [k, v] : raw)
      for (const auto& a : v) CHECK(a.empty());
  }

  TEST_CASE("a surrounding-object answer lands in its group") {
    KitchenBackend b;
    const auto raw = ask_all(b, tiny_image(), "person", default_templates());
    const auto& so = raw.at(QuestionKind::surrounding_object);
    CHECK(std::find(so.begin(), so.end(), "glass") != so.end());
  }

  TEST_CASE("caching backend answers repeats from the cache") {
    auto inner = std::make_shared<FixedBackend>("water");
    CachingVqaBackend cache(inner);
    const auto img = tiny_image();
    CHECK(cache.answer(img, "What is under the boat?") == "water");
    CHECK(cache.answer(img, "What is under the boat?") == "water");
    CHECK(cache.answer(tiny_image(0.2), "What is under the boat?") == "water");
    CHECK(inner->calls == 2);
    CHECK(cache.hits() == 1);
    CHECK(cache.misses() == 2);

    testing::TempDir dir("vqa-cache");
    cache.save(dir / "cache.json");
    auto inner2 = std::make_shared<FixedBackend>("never");
    CachingVqaBackend warm(inner2);
    warm.load(dir / "cache.json");
    CHECK(warm.answer(img, "What is under the boat?") == "water");
    CHECK(inner2->calls == 0);
  }
}

TEST_SUITE("post-processing") {
  TEST_CASE("foreground answers get the label appended when missing") {
    CHECK(postprocess_fg({"passenger"}, "train") ==
          std::vector<std::string>{"a photo of passenger train", "a photo of train"});
    CHECK(postprocess_fg({""}, "cat") == std::vector<std::string>{"a photo of cat"});
    CHECK(postprocess_fg({"freight train"}, "train") ==
          std::vector<std::string>{"a photo of freight train", "a photo of train"});
    CHECK(postprocess_fg({}, "cat") == std::vector<std::string>{"a photo of cat"});
  }

  TEST_CASE("containment is whole-word and case-insensitive") {
    CHECK(postprocess_fg({"Freight TRAIN"}, "train").front() == "a photo of Freight TRAIN");
    // "trainer" does not contain the word "train"
    CHECK(postprocess_fg({"trainer"}, "train").front() == "a photo of trainer train");
    CHECK(contains_word("a potted plant here", "potted plant"));
    CHECK_FALSE(contains_word("pottedplant", "potted plant"));
  }

  TEST_CASE("no label is ever appended twice") {
    const std::vector<std::string> answers = {"steam train", "train", "old", "", "TRAIN car", "trains"};
    const auto out = postprocess_fg(answers, "train");
    CHECK(out.size() == 6);  // five non-empty answers plus the label
    for (const auto& t : out) {
      CHECK(t.rfind("a photo of ", 0) == 0);
      CHECK(contains_ci(t, "train"));
      // brute force: the label word occurs at most once more than in the answer
      std::size_t n = 0;
      for (std::size_t p = 0; (p = t.find("train train", p)) != std::string::npos; ++p) ++n;
      CHECK(n == 0);
    }
  }

  TEST_CASE("output lengths stay within bounds") {
    for (int empties = 0; empties <= 6; ++empties) {
      std::vector<std::string> fg(6, "big");
      for (int i = 0; i < empties; ++i) fg[i] = "";
      const auto out = postprocess_fg(fg, "dog");
      CHECK(out.size() >= 1);
      CHECK(out.size() <= 7);
    }
    for (int empties = 0; empties <= 10; ++empties) {
      std::vector<std::string> bg(10, "grass");
      for (int i = 0; i < empties; ++i) bg[i] = "";
      const auto out = postprocess_bg(bg, "dog");
      CHECK(out.size() >= 1);
      CHECK(out.size() <= 10);
    }
  }

  TEST_CASE("background answers are wrapped, label echoes dropped") {
    const auto out = postprocess_bg({"glass", "", "person", "table"}, "person");
    CHECK(out == std::vector<std::string>{"a photo of glass", "a photo of table"});
    CHECK(postprocess_bg({"", "", ""}, "boat") == std::vector<std::string>{"a photo of no boat"});
    CHECK(postprocess_bg({"kitchen"}, "person") == std::vector<std::string>{"a photo of kitchen"});
    CHECK(postprocess_bg({"Boat"}, "boat") == std::vector<std::string>{"a photo of no boat"});
  }

  TEST_CASE("dedup is off by default and available") {
    CHECK(postprocess_bg({"grass", "grass"}, "cow").size() == 2);
    PostprocessOptions o;
    o.dedup = true;
    CHECK(postprocess_bg({"grass", "grass"}, "cow").size() == 2);
    CHECK(postprocess_bg({"grass", "grass"}, "cow", o).size() == 1);
  }

  TEST_CASE("baseline corpus") {
    const auto t = build_baseline_corpus("train");
    CHECK(t.fg_texts == std::vector<std::string>{"a photo of train"});
    CHECK(t.bg_texts == std::vector<std::string>{"a photo of no train"});
    const auto c = build_baseline_corpus("cat");
    CHECK(c.fg_texts == std::vector<std::string>{"a photo of cat"});
    CHECK(c.bg_texts == std::vector<std::string>{"a photo of no cat"});
    CHECK_THROWS_AS(build_baseline_corpus(""), TemplateError);
  }

  TEST_CASE("class corpus invariants") {
    KitchenBackend b;
    const auto raw = ask_all(b, tiny_image(), "person", default_templates());
    const auto c = build_class_corpus(15, "person", raw);
    CHECK(std::find(c.fg_texts.begin(), c.fg_texts.end(), "a photo of person") != c.fg_texts.end());
    CHECK(std::find(c.bg_texts.begin(), c.bg_texts.end(), "a photo of glass") != c.bg_texts.end());
    CHECK(std::find(c.bg_texts.begin(), c.bg_texts.end(), "a photo of kitchen") != c.bg_texts.end());
    for (const auto& t : c.fg_texts) {
      CHECK(t.rfind("a photo of ", 0) == 0);
      CHECK(contains_ci(t, "person"));
      CHECK(std::find(c.bg_texts.begin(), c.bg_texts.end(), t) == c.bg_texts.end());
    }
    CHECK(c.fg_sources.size() == c.fg_texts.size());
    CHECK(c.bg_sources.size() == c.bg_texts.size());
  }

  TEST_CASE("a BG answer equal to an FG prompt is removed") {
    RawAnswers raw;
    raw[QuestionKind::fine_grained] = {"red"};
    raw[QuestionKind::surrounding_object] = {"red apple", "bowl"};
    const auto c = build_class_corpus(1, "apple", raw);
    CHECK(c.bg_texts == std::vector<std::string>{"a photo of bowl"});
  }

  TEST_CASE("restricting keeps the category and falls back for BG") {
    RawAnswers raw;
    raw[QuestionKind::fine_grained] = {"tabby"};
    raw[QuestionKind::alias] = {"kitty"};
    raw[QuestionKind::surrounding_object] = {"sofa"};
    raw[QuestionKind::scene] = {"living room"};
    const auto c = build_class_corpus(8, "cat", raw);
    const auto r = restrict_corpus(c, {TextSource::fine_grained});
    CHECK(r.fg_texts == std::vector<std::string>{"a photo of tabby cat", "a photo of cat"});
    CHECK(r.bg_texts == std::vector<std::string>{"a photo of no cat"});
    const auto s = restrict_corpus(c, {TextSource::scene});
    CHECK(s.bg_texts == std::vector<std::string>{"a photo of living room"});
  }
}

TEST_SUITE("corpus store") {
  CorpusStore sample_store(int images, int classes) {
    CorpusStore s;
    s.backend_id = "unit";
    for (int i = 0; i < images; ++i)
      for (int k = 1; k <= classes; ++k) {
        RawAnswers raw;
        raw[QuestionKind::fine_grained] = {"big", ""};
        raw[QuestionKind::surrounding_object] = {"grass", "sky"};
        s.records[{"img" + std::to_string(i), k}] = build_class_corpus(k, "c" + std::to_string(k), raw);
      }
    return s;
  }

  TEST_CASE("round-trip is lossless") {
    testing::TempDir dir("corpus-rt");
    const auto s = sample_store(1, 1);
    save_corpus(s, dir / "c.jsonl");
    CHECK(load_corpus(dir / "c.jsonl") == s);
  }

  TEST_CASE("2 images x 3 classes give 6 records, one per line") {
    testing::TempDir dir("corpus-count");
    save_corpus(sample_store(2, 3), dir / "c.jsonl");
    const auto back = load_corpus(dir / "c.jsonl");
    CHECK(back.records.size() == 6);
    const auto text = testing::slurp(dir / "c.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 7);  // header + records
    CHECK(back.at("img1", 3).class_label == "c3");
    CHECK(back.find("img2", 1) == nullptr);
  }

  TEST_CASE("wrong schema version is a version error") {
    testing::TempDir dir("corpus-version");
    save_corpus(sample_store(1, 1), dir / "c.jsonl");
    std::string text = testing::slurp(dir / "c.jsonl");
    const auto pos = text.find("\"schema_version\":1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 18, "\"schema_version\":9");
    testing::spit(dir / "c.jsonl", text);
    CHECK_THROWS_AS(load_corpus(dir / "c.jsonl"), VersionError);
  }

  TEST_CASE("missing and malformed files") {
    testing::TempDir dir("corpus-bad");
    CHECK_THROWS_AS(load_corpus(dir / "absent.jsonl"), IoError);
    testing::spit(dir / "bad.jsonl", "{\"format\":\"qaclims-corpus\",\"schema_version\":1}\n{not json\n");
    CHECK_THROWS_AS(load_corpus(dir / "bad.jsonl"), FormatError);
  }

  TEST_CASE("baseline and restricted stores keep every key") {
    const auto s = sample_store(2, 2);
    const auto b = baseline_store(s);
    CHECK(b.records.size() == s.records.size());
    for (const auto& [k, c] : b.records) CHECK(c.bg_texts.front().find("a photo of no ") == 0);
    CHECK(restrict_store(s, {}).records.size() == s.records.size());
  }
}

TEST_SUITE("mock corpus generation") {
  TEST_CASE("synthetic scenes yield truthful background answers, deterministically") {
    testing::TempDir dir("mockgen");
    const World world(3);
    const auto m = data::generate_synthetic(6, 3, 21, dir / "d");
    const auto samples = data::load_samples(m);
    const TemplateSet ts{kDefaultTemplateVersion, default_templates()};
    auto vqa = pipeline::make_mock_vqa(world, samples, ts);
    const auto a = pipeline::build_corpus(vqa, samples, m.class_names, ts, 1);
    auto vqa2 = pipeline::make_mock_vqa(world, samples, ts);
    const auto b = pipeline::build_corpus(vqa2, samples, m.class_names, ts, 4);
    CHECK(a == b);

    std::size_t expected = 0;
    for (const auto& s : samples) expected += s.labels.size();
    CHECK(a.records.size() == expected);

    // The scene answer of every record names the scene the image was drawn on.
    for (const auto& s : samples) {
      const auto& scene = world.scenes()[s.descriptor->scene];
      for (ClassId k : s.labels) {
        const auto& c = a.at(s.id, k);
        CHECK(std::find(c.bg_texts.begin(), c.bg_texts.end(), "a photo of " + scene.name) != c.bg_texts.end());
      }
    }
  }

  TEST_CASE("unregistered images still get deterministic answers") {
    const World world(4);
    MockVqaBackend vqa(world, default_templates(), 3);
    const auto img = tiny_image(0.3);
    const std::string q = fill_template(default_templates()[0], world.cls(2).label);
    CHECK(vqa.answer(img, q) == vqa.answer(img, q));
    CHECK_FALSE(vqa.answer(img, q).empty());
    CHECK(vqa.answer(img, "Is this a question from no template?").empty());
  }
}
