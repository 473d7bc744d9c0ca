#include "pastanet/vocabulary.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pastanet::kb {

namespace {

// Default part-state inventories, verb tokens normalized to snake_case.
const std::array<std::vector<std::string>, kNumPartTypes> kDefaultVerbs = {{
    // head (13)
    {"eat", "inspect", "talk_with_sth", "talk_to", "close_with", "kiss", "raise_up", "lick",
     "blow", "drink_with", "smell", "wear", "no_action"},
    // arm (5)
    {"carry", "close_to", "hug", "swing", "no_action"},
    // hand (31)
    {"hold", "carry", "reach_for", "touch", "put_on", "twist", "wear", "throw", "throw_out",
     "write_on", "point_with", "point_to", "use_sth_to_point_to", "press", "squeeze", "scratch",
     "pinch", "gesture_to", "push", "pull", "pull_with_sth", "wash", "wash_with_sth",
     "hold_in_both_hands", "lift", "raise", "feed", "cut_with_sth", "catch_with_sth",
     "pour_into", "no_action"},
    // hip (5)
    {"sit_on", "sit_in", "sit_beside", "close_with", "no_action"},
    // thigh (10)
    {"walk_with", "walk_to", "run_with", "run_to", "jump_with", "close_with", "straddle",
     "jump_down", "walk_away", "no_action"},
    // foot (12)
    {"stand_on", "step_on", "walk_with", "walk_to", "run_with", "run_to", "dribble", "kick",
     "jump_down", "jump_with", "walk_away", "no_action"},
}};

const std::vector<std::string> kDefaultInteractions = {
    "adjust", "assemble", "block", "blow", "board", "break", "brush_with", "board_gaming",
    "buy", "carry", "catch", "chase", "check", "chop", "clean", "clink_glass", "close",
    "control", "cook", "cut", "cut_with", "dig", "direct", "drag", "dribble", "drink_with",
    "drive", "dry", "eat", "eat_at", "enter", "exit", "extract", "feed", "fill", "flip",
    "flush", "fly", "fight", "fishing", "give_sth_to_sb", "grab", "greet", "grind", "groom",
    "hand_shake", "herd", "hit", "hold", "hop_on", "hose", "hug", "hunt", "inspect",
    "install", "jump", "kick", "kiss", "lasso", "launch", "lick", "lie_on", "lift", "light",
    "listen_to_sth", "listen_to_a_person", "load", "lose", "make", "milk", "move", "open",
    "operate", "pack", "paint", "park", "pay", "peel", "pet", "play_musical_instrument",
    "play_with_sb", "play_with_pets", "pick", "pick_up", "point", "pour", "press", "pull",
    "push", "put_down", "put_on", "race", "read", "release", "repair", "ride", "row", "run",
    "sail", "scratch", "serve", "set", "shear", "shoot", "shovel", "sign", "sing_to_sb",
    "sip", "sit_at", "sit_on", "slide", "smell", "smoke", "spin", "squeeze", "stab",
    "stand_on", "stand_under", "stick", "stir", "stop_at", "straddle", "swing", "tag",
    "take_a_photo", "take_sth_from_sb", "talk_on", "talk_to", "teach", "text_on", "throw",
    "tie", "toast", "touch", "train", "turn", "type_on", "walk", "wash", "watch", "wave",
    "wear", "wield", "work_on_laptop", "write", "zip"};

const std::vector<std::string> kDefaultBodyMotions = {
    "bow", "clap", "climb", "crawl", "dance", "fall", "get_up", "kneel", "physical_exercise",
    "swim"};

int part_type_from_name(const std::string& name) {
  for (int t = 0; t < kNumPartTypes; ++t)
    if (name == kPartTypeNames[t]) return t;
  throw data_error("unknown part type '" + name + "'");
}

}  // namespace

void PaStaVocabulary::rebuild_index() {
  for (int t = 0; t < kNumPartTypes; ++t) {
    index_[t].clear();
    for (std::size_t i = 0; i < verbs_[t].size(); ++i) index_[t][verbs_[t][i]] = static_cast<int>(i);
  }
}

void PaStaVocabulary::validate() const {
  for (int t = 0; t < kNumPartTypes; ++t) {
    const auto& list = verbs_[t];
    if (list.empty())
      throw data_error(std::string("empty verb list for part type ") + std::string(kPartTypeNames[t]));
    std::set<std::string> seen(list.begin(), list.end());
    if (seen.size() != list.size())
      throw data_error(std::string("duplicate verbs in part type ") + std::string(kPartTypeNames[t]));
    if (list.back() != kNoAction)
      throw data_error(std::string("verb list for ") + std::string(kPartTypeNames[t]) +
                       " must end with no_action");
  }
}

const PaStaVocabulary& PaStaVocabulary::embedded_default() {
  static const PaStaVocabulary v = from_lists(kDefaultVerbs);
  return v;
}

PaStaVocabulary PaStaVocabulary::from_lists(
    std::array<std::vector<std::string>, kNumPartTypes> lists) {
  PaStaVocabulary v;
  v.verbs_ = std::move(lists);
  v.validate();
  v.rebuild_index();
  return v;
}

PaStaVocabulary PaStaVocabulary::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open vocabulary file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed vocabulary JSON in " + path + ": " + e.what());
  }
  std::array<std::vector<std::string>, kNumPartTypes> lists;
  for (auto& [key, value] : j.items()) {
    int t = part_type_from_name(key);
    lists[t] = value.get<std::vector<std::string>>();
  }
  return from_lists(std::move(lists));
}

void PaStaVocabulary::save_json(const std::string& path) const {
  nlohmann::json j;
  for (int t = 0; t < kNumPartTypes; ++t) j[std::string(kPartTypeNames[t])] = verbs_[t];
  std::ofstream out(path);
  if (!out) throw data_error("cannot write vocabulary file " + path);
  out << j.dump(2) << "\n";
}

std::size_t PaStaVocabulary::total() const {
  std::size_t n = 0;
  for (const auto& l : verbs_) n += l.size();
  return n;
}

int PaStaVocabulary::verb_index(PartType t, const std::string& verb) const {
  const auto& idx = index_[static_cast<int>(t)];
  auto it = idx.find(verb);
  return it == idx.end() ? -1 : it->second;
}

const ActivityLabelSet& ActivityLabelSet::embedded_default() {
  static const ActivityLabelSet s = [] {
    std::vector<std::string> names = kDefaultInteractions;
    std::vector<bool> motion(names.size(), false);
    for (const auto& m : kDefaultBodyMotions) {
      names.push_back(m);
      motion.push_back(true);
    }
    return from_names(std::move(names), std::move(motion));
  }();
  return s;
}

ActivityLabelSet ActivityLabelSet::from_names(std::vector<std::string> names,
                                              std::vector<bool> body_motion) {
  if (names.size() != body_motion.size())
    throw data_error("activity name/body-motion flag lists differ in length");
  ActivityLabelSet s;
  s.names_ = std::move(names);
  s.body_motion_ = std::move(body_motion);
  for (std::size_t i = 0; i < s.names_.size(); ++i) {
    auto [it, inserted] = s.index_.emplace(s.names_[i], static_cast<int>(i));
    (void)it;
    if (!inserted) throw data_error("duplicate activity name '" + s.names_[i] + "'");
  }
  return s;
}

int ActivityLabelSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

}  // namespace pastanet::kb
