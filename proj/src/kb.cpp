#include "pastanet/kb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace pastanet::kb {

using nlohmann::json;

CooccurrenceCounts count_cooccurrence(const Corpus& corpus, const ActivityLabelSet& activities,
                                      const PaStaVocabulary& vocab) {
  CooccurrenceCounts c;
  c.activities = activities.names();
  for (int t = 0; t < kNumPartTypes; ++t)
    for (const auto& v : vocab.verbs(static_cast<PartType>(t)))
      if (v != kNoAction) c.candidates.push_back({static_cast<PartType>(t), v});

  std::map<PastaCandidate, std::size_t> cand_index;
  for (std::size_t i = 0; i < c.candidates.size(); ++i) cand_index[c.candidates[i]] = i;

  c.activity_count.assign(c.activities.size(), 0);
  c.pasta_count.assign(c.candidates.size(), 0);
  c.joint.assign(c.activities.size(), std::vector<std::uint64_t>(c.candidates.size(), 0));

  for (const auto& rec : corpus.images) {
    for (const auto& person : rec.persons) {
      ++c.total;
      std::vector<std::size_t> act_ids, cand_ids;
      for (const auto& a : person.activities) {
        int idx = activities.index_of(a);
        if (idx >= 0) act_ids.push_back(static_cast<std::size_t>(idx));
      }
      for (int p = 0; p < kNumParts; ++p) {
        PartType t = part_type_of(static_cast<PartIndex>(p));
        for (const auto& v : person.pasta_labels[p]) {
          if (v == kNoAction) continue;
          auto it = cand_index.find({t, v});
          if (it != cand_index.end()) cand_ids.push_back(it->second);
        }
      }
      std::sort(cand_ids.begin(), cand_ids.end());
      cand_ids.erase(std::unique(cand_ids.begin(), cand_ids.end()), cand_ids.end());
      for (auto a : act_ids) ++c.activity_count[a];
      for (auto p : cand_ids) ++c.pasta_count[p];
      for (auto a : act_ids)
        for (auto p : cand_ids) ++c.joint[a][p];
    }
  }
  return c;
}

CooccurrenceMatrix compute_npmi(const CooccurrenceCounts& counts) {
  if (counts.total == 0) throw data_error("co-occurrence counts cover an empty corpus");
  const double n = static_cast<double>(counts.total);
  CooccurrenceMatrix m;
  m.activities = counts.activities;
  m.candidates = counts.candidates;
  m.counts = counts;
  m.npmi.assign(counts.activities.size(),
                std::vector<double>(counts.candidates.size(),
                                    std::numeric_limits<double>::quiet_NaN()));
  m.defined.assign(counts.activities.size(), std::vector<bool>(counts.candidates.size(), false));

  for (std::size_t a = 0; a < counts.activities.size(); ++a) {
    for (std::size_t p = 0; p < counts.candidates.size(); ++p) {
      std::uint64_t joint = counts.joint[a][p];
      if (joint > counts.activity_count[a] || joint > counts.pasta_count[p])
        throw data_error("malformed counts: joint exceeds a marginal for activity '" +
                         counts.activities[a] + "'");
      if (joint == 0) continue;
      double pj = static_cast<double>(joint) / n;
      double pa = static_cast<double>(counts.activity_count[a]) / n;
      double pp = static_cast<double>(counts.pasta_count[p]) / n;
      double value;
      if (pj >= 1.0) {
        value = 1.0;  // every record carries both; the -ln p(a,p) scale vanishes
      } else {
        value = std::log(pj / (pa * pp)) / (-std::log(pj));
      }
      m.npmi[a][p] = value;
      m.defined[a][p] = true;
    }
  }
  return m;
}

std::vector<RankedCandidate> select_pasta_candidates(const CooccurrenceMatrix& matrix,
                                                     std::size_t k) {
  std::vector<RankedCandidate> pool;
  for (std::size_t p = 0; p < matrix.candidates.size(); ++p) {
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t a = 0; a < matrix.activities.size(); ++a) {
      if (matrix.defined[a][p]) {
        any = true;
        best = std::max(best, matrix.npmi[a][p]);
      }
    }
    if (any) pool.push_back({matrix.candidates[p], best});
  }
  if (k > pool.size())
    throw data_error("requested " + std::to_string(k) + " candidates but only " +
                     std::to_string(pool.size()) + " have defined scores");
  std::sort(pool.begin(), pool.end(), [](const RankedCandidate& x, const RankedCandidate& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.candidate < y.candidate;
  });
  pool.resize(k);
  return pool;
}

ActivityParsingTree build_parsing_tree(const CooccurrenceMatrix& matrix, double threshold) {
  if (threshold < -1.0 || threshold > 1.0)
    throw usage_error("parsing-tree threshold must lie in [-1,1]");
  ActivityParsingTree tree;
  tree.threshold = threshold;
  for (std::size_t a = 0; a < matrix.activities.size(); ++a)
    for (std::size_t p = 0; p < matrix.candidates.size(); ++p)
      if (matrix.defined[a][p] && matrix.npmi[a][p] >= threshold)
        tree.edges.push_back({matrix.activities[a], matrix.candidates[p], matrix.npmi[a][p]});
  return tree;
}

namespace {

json candidate_to_json(const PastaCandidate& c) {
  return {{"part_type", std::string(kPartTypeNames[static_cast<int>(c.part_type)])},
          {"verb", c.verb}};
}

PastaCandidate candidate_from_json(const json& j) {
  std::string tname = j.at("part_type").get<std::string>();
  for (int t = 0; t < kNumPartTypes; ++t)
    if (tname == kPartTypeNames[t])
      return {static_cast<PartType>(t), j.at("verb").get<std::string>()};
  throw data_error("unknown part type '" + tname + "' in kb file");
}

}  // namespace

void save_kb_json(const CooccurrenceMatrix& matrix, const std::string& path) {
  json j;
  j["activities"] = matrix.activities;
  json cands = json::array();
  for (const auto& c : matrix.candidates) cands.push_back(candidate_to_json(c));
  j["candidates"] = std::move(cands);
  j["counts"] = {{"total", matrix.counts.total},
                 {"activity", matrix.counts.activity_count},
                 {"pasta", matrix.counts.pasta_count},
                 {"joint", matrix.counts.joint}};
  json rows = json::array();
  for (std::size_t a = 0; a < matrix.activities.size(); ++a) {
    json row = json::array();
    for (std::size_t p = 0; p < matrix.candidates.size(); ++p)
      row.push_back(matrix.defined[a][p] ? json(matrix.npmi[a][p]) : json(nullptr));
    rows.push_back(std::move(row));
  }
  j["npmi"] = std::move(rows);
  std::ofstream out(path);
  if (!out) throw data_error("cannot write kb file " + path);
  out << j.dump(2) << "\n";
}

CooccurrenceMatrix load_kb_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open kb file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw data_error("malformed kb JSON in " + path + ": " + e.what());
  }
  CooccurrenceCounts counts;
  counts.activities = j.at("activities").get<std::vector<std::string>>();
  for (const auto& c : j.at("candidates")) counts.candidates.push_back(candidate_from_json(c));
  counts.total = j.at("counts").at("total").get<std::uint64_t>();
  counts.activity_count = j.at("counts").at("activity").get<std::vector<std::uint64_t>>();
  counts.pasta_count = j.at("counts").at("pasta").get<std::vector<std::uint64_t>>();
  counts.joint = j.at("counts").at("joint").get<std::vector<std::vector<std::uint64_t>>>();
  return compute_npmi(counts);
}

void save_tree_json(const ActivityParsingTree& tree, const std::string& path) {
  json j;
  j["threshold"] = tree.threshold;
  json edges = json::array();
  for (const auto& e : tree.edges) {
    json je = candidate_to_json(e.pasta);
    je["activity"] = e.activity;
    je["weight"] = e.weight;
    edges.push_back(std::move(je));
  }
  j["edges"] = std::move(edges);
  std::ofstream out(path);
  if (!out) throw data_error("cannot write tree file " + path);
  out << j.dump(2) << "\n";
}

MergeResult merge_duplicate_annotations(const PastaLabels& first, const PastaLabels& second) {
  MergeResult r;
  for (int p = 0; p < kNumParts; ++p) {
    for (const auto& v : first[p]) {
      if (second[p].count(v))
        r.consensus[p].insert(v);
      else
        r.disagreements.push_back({static_cast<PartIndex>(p), v});
    }
    for (const auto& v : second[p])
      if (!first[p].count(v)) r.disagreements.push_back({static_cast<PartIndex>(p), v});
    if (r.consensus[p].empty()) r.consensus[p].insert(kNoAction);
  }
  return r;
}

ImageLevelLabels aggregate_image_level_labels(const ImageRecord& record,
                                              const ActivityLabelSet& activities,
                                              const PaStaVocabulary& vocab) {
  ImageLevelLabels out;
  out.activity_multi_hot.assign(activities.size(), 0);
  for (int p = 0; p < kNumParts; ++p) {
    PartType t = part_type_of(static_cast<PartIndex>(p));
    out.pasta_multi_hot[p].assign(vocab.size(t), 0);
  }
  for (const auto& person : record.persons) {
    for (const auto& a : person.activities) {
      int idx = activities.index_of(a);
      if (idx >= 0) out.activity_multi_hot[idx] = 1;
    }
    for (int p = 0; p < kNumParts; ++p) {
      PartType t = part_type_of(static_cast<PartIndex>(p));
      for (const auto& v : person.pasta_labels[p]) {
        int idx = vocab.verb_index(t, v);
        if (idx >= 0) out.pasta_multi_hot[p][idx] = 1;
      }
    }
  }
  return out;
}

MilResult mil_pool(const std::vector<std::vector<double>>& candidate_scores,
                   std::size_t vector_length) {
  MilResult r;
  if (candidate_scores.empty()) {
    r.scores.assign(vector_length, 0.0);
    r.empty_candidate_set = true;
    return r;
  }
  for (const auto& s : candidate_scores)
    if (s.size() != candidate_scores.front().size())
      throw data_error("mil_pool: candidate score vectors differ in length");
  r.scores = candidate_scores.front();
  for (std::size_t i = 1; i < candidate_scores.size(); ++i)
    for (std::size_t j = 0; j < r.scores.size(); ++j)
      r.scores[j] = std::max(r.scores[j], candidate_scores[i][j]);
  return r;
}

std::array<int, kNumParts> derive_attention_labels(const PastaLabels& labels) {
  std::array<int, kNumParts> att{};
  for (int p = 0; p < kNumParts; ++p)
    for (const auto& v : labels[p])
      if (v != kNoAction) att[p] = 1;
  return att;
}

std::vector<std::vector<std::string>> few_shot_split(
    const std::map<std::string, std::uint64_t>& train_counts,
    const std::vector<std::uint64_t>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] <= thresholds[i - 1])
      throw usage_error("few-shot thresholds must be strictly increasing");
  std::vector<std::vector<std::string>> sets;
  for (auto thr : thresholds) {
    std::vector<std::string> s;
    for (const auto& [name, count] : train_counts)
      if (count <= thr) s.push_back(name);
    sets.push_back(std::move(s));
  }
  return sets;
}

}  // namespace pastanet::kb
