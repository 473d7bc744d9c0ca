#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "pastanet/types.hpp"

namespace pastanet::kb {

inline constexpr const char* kNoAction = "no_action";
inline constexpr const char* kSomething = "something";
// Object token used in place of a detected object for body-only motions.
inline constexpr const char* kSceneToken = "scene";

/// One part-state token: what a body part (type) is doing to what.
struct PaStaTriplet {
  PartType part_type;
  std::string verb;
  std::string object_slot = kSomething;
};

/// Per-part-type verb inventories. Each list is ordered and ends with
/// "no_action". The embedded default carries the 76-state inventory
/// (head 13, arm 5, hand 31, hip 5, thigh 10, foot 12).
class PaStaVocabulary {
 public:
  static const PaStaVocabulary& embedded_default();
  static PaStaVocabulary from_lists(std::array<std::vector<std::string>, kNumPartTypes> lists);
  static PaStaVocabulary load_json(const std::string& path);

  const std::vector<std::string>& verbs(PartType t) const {
    return verbs_[static_cast<int>(t)];
  }
  std::size_t size(PartType t) const { return verbs(t).size(); }
  std::size_t total() const;

  /// Index of a verb within its part type's list, or -1.
  int verb_index(PartType t, const std::string& verb) const;
  bool contains(PartType t, const std::string& verb) const { return verb_index(t, verb) >= 0; }
  int no_action_index(PartType t) const { return static_cast<int>(size(t)) - 1; }

  void save_json(const std::string& path) const;

 private:
  PaStaVocabulary() = default;
  void validate() const;
  void rebuild_index();

  std::array<std::vector<std::string>, kNumPartTypes> verbs_;
  std::array<std::unordered_map<std::string, int>, kNumPartTypes> index_;
};

/// Ordered activity identifiers; body motions are flagged because they use
/// whole-image context instead of an object box.
class ActivityLabelSet {
 public:
  /// The embedded default: 146 human-object interactions + 10 body motions.
  static const ActivityLabelSet& embedded_default();
  static ActivityLabelSet from_names(std::vector<std::string> names,
                                     std::vector<bool> body_motion);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool is_body_motion(std::size_t i) const { return body_motion_[i]; }
  int index_of(const std::string& name) const;

  ActivityLabelSet() = default;

 private:
  std::vector<std::string> names_;
  std::vector<bool> body_motion_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace pastanet::kb
