#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "occfield/image_io.hpp"

namespace occfield {

inline constexpr uint8_t kUncertainLabel = 255;

/// Maps detector phrases back to category ids. One phrase belongs to exactly
/// one category; ids must be dense 0..C-1 with 255 reserved for uncertain.
struct PromptTable {
  struct Category {
    int id = 0;
    std::string name;
    std::vector<std::string> phrases;
  };
  std::vector<Category> categories;
  std::unordered_map<std::string, int> phrase_to_id;

  int lookup(const std::string& phrase) const {
    auto it = phrase_to_id.find(phrase);
    return it == phrase_to_id.end() ? -1 : it->second;
  }
  int num_categories() const { return static_cast<int>(categories.size()); }
};

inline PromptTable parse_prompt_table(const nlohmann::json& j) {
  PromptTable t;
  for (const auto& entry : j) {
    PromptTable::Category cat;
    cat.id = entry.at("id").get<int>();
    cat.name = entry.at("name").get<std::string>();
    for (const auto& ph : entry.at("phrases")) cat.phrases.push_back(ph.get<std::string>());
    if (cat.phrases.empty()) cat.phrases.push_back(cat.name);  // identity row
    t.categories.push_back(std::move(cat));
  }
  std::vector<bool> seen(t.categories.size(), false);
  for (const auto& cat : t.categories) {
    if (cat.id < 0 || cat.id >= static_cast<int>(t.categories.size()) || seen[cat.id])
      throw std::invalid_argument("prompt table: category ids must be dense 0..C-1, got " +
                                  std::to_string(cat.id));
    seen[cat.id] = true;
    if (cat.id == kUncertainLabel)
      throw std::invalid_argument("prompt table: id 255 is reserved for uncertain");
    for (const auto& ph : cat.phrases) {
      auto [it, inserted] = t.phrase_to_id.emplace(ph, cat.id);
      if (!inserted)
        throw std::invalid_argument("prompt table: phrase '" + ph +
                                    "' maps to more than one category");
    }
  }
  return t;
}

inline PromptTable load_prompt_table(const std::string& path) {
  return parse_prompt_table(nlohmann::json::parse(read_text_file(path)));
}

/// One detection: binary mask, detector logit, detector phrase.
struct DetectionMask {
  std::vector<uint8_t> mask;  // H*W, nonzero = covered
  double logit = 0;
  std::string phrase;
};

struct DetectionMaskSet {
  std::string image_id;
  int width = 0, height = 0;
  std::vector<DetectionMask> entries;
};

/// Per-pixel argmax of logit * mask across detections, mapped through the
/// prompt table. Pixels no mask covers stay uncertain (255). Ties resolve to
/// the lowest detection index.
inline std::vector<uint8_t> fuse_labels(const DetectionMaskSet& set, const PromptTable& table) {
  const size_t n = static_cast<size_t>(set.width) * set.height;
  std::vector<int> category(set.entries.size());
  for (size_t i = 0; i < set.entries.size(); ++i) {
    const auto& e = set.entries[i];
    if (e.mask.size() != n)
      throw std::runtime_error("fuse_labels: mask dimensions do not match image " + set.image_id);
    if (!(e.logit > 0.0) || e.logit > 1.0)
      throw std::runtime_error("fuse_labels: logit must lie in (0, 1] for '" + e.phrase + "'");
    const int id = table.lookup(e.phrase);
    if (id < 0)
      throw std::invalid_argument("fuse_labels: phrase '" + e.phrase + "' is not in the prompt table");
    category[i] = id;
  }
  std::vector<uint8_t> labels(n, kUncertainLabel);
  for (size_t p = 0; p < n; ++p) {
    double best = 0.0;
    int best_i = -1;
    for (size_t i = 0; i < set.entries.size(); ++i) {
      const double score = set.entries[i].mask[p] ? set.entries[i].logit : 0.0;
      if (score > best) {
        best = score;
        best_i = static_cast<int>(i);
      }
    }
    if (best_i >= 0) labels[p] = static_cast<uint8_t>(category[best_i]);
  }
  return labels;
}

/// Mask-set manifest:
///   { "image_id": ..., "width": ..., "height": ...,
///     "entries": [ { "mask_path": "m.png", "logit": 0.9, "phrase": "sedan" }, ... ] }
/// mask_path is relative to the manifest file.
inline DetectionMaskSet load_mask_set(const std::string& manifest_path) {
  const auto j = nlohmann::json::parse(read_text_file(manifest_path));
  DetectionMaskSet set;
  set.image_id = j.at("image_id").get<std::string>();
  set.width = j.at("width").get<int>();
  set.height = j.at("height").get<int>();
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  for (const auto& e : j.at("entries")) {
    DetectionMask m;
    m.logit = e.at("logit").get<double>();
    m.phrase = e.at("phrase").get<std::string>();
    const RawPng png = read_png_raw8((dir / e.at("mask_path").get<std::string>()).string());
    if (png.width != set.width || png.height != set.height)
      throw std::runtime_error("mask " + e.at("mask_path").get<std::string>() +
                               " does not match manifest dimensions");
    m.mask.resize(png.values.size());
    for (size_t i = 0; i < png.values.size(); ++i) m.mask[i] = png.values[i] ? 1 : 0;
    set.entries.push_back(std::move(m));
  }
  return set;
}

/// The shipped palette for label PNGs: a fixed distinguishable color per
/// category id, mid-gray for uncertain.
inline std::array<std::array<uint8_t, 3>, 256> label_palette() {
  std::array<std::array<uint8_t, 3>, 256> pal{};
  constexpr std::array<std::array<uint8_t, 3>, 16> base = {{{255, 120, 50},
                                                            {255, 192, 203},
                                                            {255, 255, 0},
                                                            {0, 150, 245},
                                                            {0, 255, 255},
                                                            {200, 180, 0},
                                                            {255, 0, 0},
                                                            {255, 240, 150},
                                                            {135, 60, 0},
                                                            {160, 32, 240},
                                                            {255, 0, 255},
                                                            {75, 0, 75},
                                                            {150, 240, 80},
                                                            {230, 230, 250},
                                                            {0, 175, 0},
                                                            {100, 100, 100}}};
  for (int i = 0; i < 256; ++i) pal[i] = base[i % 16];
  pal[kUncertainLabel] = {128, 128, 128};
  return pal;
}

}  // namespace occfield
