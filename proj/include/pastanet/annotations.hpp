#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pastanet/types.hpp"
#include "pastanet/vocabulary.hpp"

namespace pastanet::kb {

/// Per-part verb label sets for one person: index = PartIndex.
using PastaLabels = std::array<std::set<std::string>, kNumParts>;

struct ObjectAnnotation {
  Box box;
  std::string object_class;
};

struct PartBoxAnnotation {
  std::optional<Box> box;  // absent when the part was never located
  bool visible = false;
};

struct PersonAnnotation {
  Box person_box{0, 0, 1, 1};
  std::set<std::string> activities;
  std::vector<ObjectAnnotation> interacted_objects;
  std::array<PartBoxAnnotation, kNumParts> part_boxes;
  PastaLabels pasta_labels;

  /// A part is active when it carries any verb other than "no_action".
  bool part_active(PartIndex p) const {
    for (const auto& v : pasta_labels[static_cast<int>(p)])
      if (v != kNoAction) return true;
    return false;
  }
};

struct ImageRecord {
  std::string image_id;
  double width = 0, height = 0;
  std::vector<PersonAnnotation> persons;
};

struct Corpus {
  std::vector<ImageRecord> images;
};

/// JSON-lines corpus IO; one ImageRecord per line. Verbs are validated
/// against the vocabulary and boxes are clipped to the image bounds.
Corpus load_corpus_jsonl(const std::string& path, const PaStaVocabulary& vocab);
void save_corpus_jsonl(const Corpus& corpus, const std::string& path);

/// Keypoint files: one person per line, {image_id, joints:[17x[x,y,conf]]}.
struct KeypointRecord {
  std::string image_id;
  std::array<Keypoint, kNumJoints> joints;
};
std::vector<KeypointRecord> load_keypoints_jsonl(const std::string& path);

}  // namespace pastanet::kb
