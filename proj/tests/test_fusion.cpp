#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "occfield/label_fusion.hpp"

using namespace occfield;
using nlohmann::json;

namespace {

PromptTable tiny_table() {
  return parse_prompt_table(json::parse(R"([
    {"id": 0, "name": "car", "phrases": ["sedan"]},
    {"id": 1, "name": "drivable surface", "phrases": ["highway"]},
    {"id": 2, "name": "manmade", "phrases": ["building", "pole"]}
  ])"));
}

DetectionMask full_mask(int w, int h, double logit, const std::string& phrase) {
  DetectionMask m;
  m.mask.assign(static_cast<size_t>(w) * h, 1);
  m.logit = logit;
  m.phrase = phrase;
  return m;
}

}  // namespace

TEST_CASE("prompt table parsing and validation", "[fusion]") {
  const PromptTable t = tiny_table();
  CHECK(t.num_categories() == 3);
  CHECK(t.lookup("sedan") == 0);
  CHECK(t.lookup("pole") == 2);
  CHECK(t.lookup("zeppelin") == -1);

  SECTION("duplicate phrase across categories is rejected") {
    CHECK_THROWS_AS(parse_prompt_table(json::parse(R"([
      {"id": 0, "name": "a", "phrases": ["x"]},
      {"id": 1, "name": "b", "phrases": ["x"]}
    ])")),
                    std::invalid_argument);
  }
  SECTION("ids must be dense") {
    CHECK_THROWS_AS(parse_prompt_table(json::parse(R"([
      {"id": 0, "name": "a", "phrases": ["x"]},
      {"id": 2, "name": "b", "phrases": ["y"]}
    ])")),
                    std::invalid_argument);
  }
  SECTION("empty phrase list becomes an identity row") {
    const PromptTable t2 = parse_prompt_table(json::parse(R"([
      {"id": 0, "name": "truck", "phrases": []}
    ])"));
    CHECK(t2.lookup("truck") == 0);
  }
}

TEST_CASE("the shipped prompt table carries the published mapping", "[fusion]") {
  const PromptTable t = load_prompt_table(std::string(OCCFIELD_FIXTURES_DIR) + "/prompt_table.json");
  auto name_of = [&](const std::string& phrase) {
    const int id = t.lookup(phrase);
    REQUIRE(id >= 0);
    return t.categories[id].name;
  };
  CHECK(name_of("sedan") == "car");
  CHECK(name_of("crane") == "construction vehicle");
  CHECK(name_of("building") == "manmade");
  CHECK(name_of("ashbin") == "manmade");
  CHECK(name_of("highway") == "drivable surface");
  CHECK(name_of("tree") == "vegetation");
  CHECK(name_of("cone") == "traffic cone");
  CHECK(name_of("bicyclist") == "bicycle");
  CHECK(name_of("motorcyclist") == "motorcycle");
  // identity rows for unlisted classes
  CHECK(name_of("barrier") == "barrier");
  CHECK(name_of("truck") == "truck");
  // the ambiguous classes stay out of the table entirely
  CHECK(t.lookup("other") == -1);
  CHECK(t.lookup("other flat") == -1);
  CHECK(t.num_categories() == 15);
}

TEST_CASE("fuse_labels", "[fusion]") {
  const PromptTable table = tiny_table();

  SECTION("single covering mask labels its category") {
    DetectionMaskSet set;
    set.image_id = "a";
    set.width = 4;
    set.height = 2;
    set.entries.push_back(full_mask(4, 2, 0.9, "sedan"));
    const auto labels = fuse_labels(set, table);
    for (uint8_t l : labels) CHECK(l == 0);
  }

  SECTION("argmax of logit*mask across overlapping masks") {
    DetectionMaskSet set;
    set.image_id = "b";
    set.width = 2;
    set.height = 1;
    set.entries.push_back(full_mask(2, 1, 0.4, "sedan"));
    set.entries.push_back(full_mask(2, 1, 0.9, "highway"));
    set.entries[1].mask[1] = 0;  // second pixel only covered by the sedan mask
    const auto labels = fuse_labels(set, table);
    CHECK(labels[0] == 1);  // drivable surface wins the overlap
    CHECK(labels[1] == 0);
  }

  SECTION("uncovered pixels stay uncertain") {
    DetectionMaskSet set;
    set.image_id = "c";
    set.width = 3;
    set.height = 1;
    auto m = full_mask(3, 1, 0.8, "pole");
    m.mask = {1, 0, 1};
    set.entries.push_back(m);
    const auto labels = fuse_labels(set, table);
    CHECK(labels[0] == 2);
    CHECK(labels[1] == kUncertainLabel);
    CHECK(labels[2] == 2);
  }

  SECTION("ties go to the lowest detection index") {
    DetectionMaskSet set;
    set.image_id = "d";
    set.width = 1;
    set.height = 1;
    set.entries.push_back(full_mask(1, 1, 0.7, "highway"));
    set.entries.push_back(full_mask(1, 1, 0.7, "sedan"));
    CHECK(fuse_labels(set, table)[0] == 1);
  }

  SECTION("unknown phrase is a configuration error naming the phrase") {
    DetectionMaskSet set;
    set.image_id = "e";
    set.width = 1;
    set.height = 1;
    set.entries.push_back(full_mask(1, 1, 0.5, "zeppelin"));
    CHECK_THROWS_WITH(fuse_labels(set, table), Catch::Matchers::ContainsSubstring("zeppelin"));
  }

  SECTION("mask dimension mismatch is a hard error") {
    DetectionMaskSet set;
    set.image_id = "f";
    set.width = 4;
    set.height = 4;
    set.entries.push_back(full_mask(2, 2, 0.5, "sedan"));
    CHECK_THROWS_AS(fuse_labels(set, table), std::runtime_error);
  }

  SECTION("determinism and monotone coverage") {
    DetectionMaskSet set;
    set.image_id = "g";
    set.width = 8;
    set.height = 8;
    std::mt19937_64 rng(3);
    auto random_mask = [&](double logit, const std::string& phrase) {
      DetectionMask m;
      m.logit = logit;
      m.phrase = phrase;
      m.mask.resize(64);
      for (auto& v : m.mask) v = rng() % 3 == 0;
      return m;
    };
    size_t prev_uncertain = 64;
    for (int i = 0; i < 5; ++i) {
      set.entries.push_back(random_mask(0.2 + 0.15 * i, i % 2 ? "sedan" : "building"));
      const auto labels = fuse_labels(set, table);
      const auto again = fuse_labels(set, table);
      CHECK(labels == again);
      size_t uncertain = 0;
      for (uint8_t l : labels) uncertain += l == kUncertainLabel;
      CHECK(uncertain <= prev_uncertain);
      prev_uncertain = uncertain;
    }
  }
}
