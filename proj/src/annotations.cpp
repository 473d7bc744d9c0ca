#include "pastanet/annotations.hpp"

#include <fstream>

#include <json.hpp>

#include "pastanet/geometry.hpp"

namespace pastanet::kb {

using nlohmann::json;

namespace {

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw data_error("box must be [x1,y1,x2,y2]");
  return Box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

PersonAnnotation person_from_json(const json& j, const PaStaVocabulary& vocab, double width,
                                  double height, const std::string& image_id) {
  PersonAnnotation p;
  p.person_box = geom::clip_box(box_from_json(j.at("person_box")), width, height);
  for (const auto& a : j.at("activities")) p.activities.insert(a.get<std::string>());
  if (j.contains("objects")) {
    for (const auto& o : j.at("objects")) {
      ObjectAnnotation obj{geom::clip_box(box_from_json(o.at("box")), width, height),
                           o.at("class").get<std::string>()};
      p.interacted_objects.push_back(std::move(obj));
    }
  }
  if (j.contains("part_boxes")) {
    const auto& pb = j.at("part_boxes");
    if (pb.size() != kNumParts)
      throw data_error("image " + image_id + ": expected 10 part boxes, got " +
                       std::to_string(pb.size()));
    for (int i = 0; i < kNumParts; ++i) {
      const auto& e = pb[i];
      // Either [[x1,y1,x2,y2], visible] or null for a never-located part.
      if (e.is_null()) continue;
      p.part_boxes[i].visible = e.at(1).get<bool>();
      if (!e.at(0).is_null())
        p.part_boxes[i].box = geom::clip_box(box_from_json(e.at(0)), width, height);
    }
  }
  const auto& pasta = j.at("pasta");
  if (pasta.size() != kNumParts)
    throw data_error("image " + image_id + ": expected 10 pasta label sets, got " +
                     std::to_string(pasta.size()));
  for (int i = 0; i < kNumParts; ++i) {
    PartType t = part_type_of(static_cast<PartIndex>(i));
    for (const auto& v : pasta[i]) {
      std::string verb = v.get<std::string>();
      if (!vocab.contains(t, verb))
        throw data_error("image " + image_id + ": verb '" + verb + "' is not legal for part type " +
                         std::string(kPartTypeNames[static_cast<int>(t)]));
      p.pasta_labels[i].insert(std::move(verb));
    }
  }
  return p;
}

json person_to_json(const PersonAnnotation& p) {
  json j;
  j["person_box"] = box_to_json(p.person_box);
  j["activities"] = p.activities;
  json objs = json::array();
  for (const auto& o : p.interacted_objects)
    objs.push_back({{"box", box_to_json(o.box)}, {"class", o.object_class}});
  j["objects"] = std::move(objs);
  json pbs = json::array();
  for (const auto& pb : p.part_boxes) {
    if (!pb.box && !pb.visible)
      pbs.push_back(nullptr);
    else
      pbs.push_back(json::array({pb.box ? box_to_json(*pb.box) : json(nullptr), pb.visible}));
  }
  j["part_boxes"] = std::move(pbs);
  json pasta = json::array();
  for (const auto& labels : p.pasta_labels) pasta.push_back(labels);
  j["pasta"] = std::move(pasta);
  return j;
}

}  // namespace

Corpus load_corpus_jsonl(const std::string& path, const PaStaVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open corpus file " + path);
  Corpus corpus;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw data_error(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    try {
      ImageRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      rec.width = j.at("width").get<double>();
      rec.height = j.at("height").get<double>();
      if (!(rec.width > 0) || !(rec.height > 0))
        throw data_error("image dimensions must be positive");
      if (!seen_ids.insert(rec.image_id).second)
        throw data_error("duplicate image_id '" + rec.image_id + "'");
      for (const auto& pj : j.at("persons"))
        rec.persons.push_back(person_from_json(pj, vocab, rec.width, rec.height, rec.image_id));
      corpus.images.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw data_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write corpus file " + path);
  for (const auto& rec : corpus.images) {
    json j;
    j["image_id"] = rec.image_id;
    j["width"] = rec.width;
    j["height"] = rec.height;
    json persons = json::array();
    for (const auto& p : rec.persons) persons.push_back(person_to_json(p));
    j["persons"] = std::move(persons);
    out << j.dump() << "\n";
  }
}

std::vector<KeypointRecord> load_keypoints_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open keypoint file " + path);
  std::vector<KeypointRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      KeypointRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      const auto& joints = j.at("joints");
      if (joints.size() != kNumJoints)
        throw data_error("expected 17 joints, got " + std::to_string(joints.size()));
      for (int i = 0; i < kNumJoints; ++i) {
        rec.joints[i].x = joints[i].at(0).get<double>();
        rec.joints[i].y = joints[i].at(1).get<double>();
        rec.joints[i].confidence = joints[i].at(2).get<double>();
        if (rec.joints[i].confidence < 0 || rec.joints[i].confidence > 1)
          throw data_error("joint confidence outside [0,1]");
      }
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw data_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pastanet::kb
