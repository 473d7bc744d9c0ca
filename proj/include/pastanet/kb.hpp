#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pastanet/annotations.hpp"
#include "pastanet/vocabulary.hpp"

namespace pastanet::kb {

/// A PaSta candidate column: (part type, verb).
struct PastaCandidate {
  PartType part_type;
  std::string verb;

  bool operator==(const PastaCandidate& o) const {
    return part_type == o.part_type && verb == o.verb;
  }
  // Lexicographic (part_type, verb); used for deterministic tie-breaking.
  bool operator<(const PastaCandidate& o) const {
    if (part_type != o.part_type) return part_type < o.part_type;
    return verb < o.verb;
  }
};

/// Person-level occurrence counts of activities, candidates, and joints.
struct CooccurrenceCounts {
  std::uint64_t total = 0;  // number of counted persons
  std::vector<std::string> activities;
  std::vector<PastaCandidate> candidates;
  std::vector<std::uint64_t> activity_count;
  std::vector<std::uint64_t> pasta_count;
  std::vector<std::vector<std::uint64_t>> joint;  // [activity][candidate]
};

/// NPMI matrix: rows = activities, cols = candidates. A cell is defined only
/// when its joint count is positive.
struct CooccurrenceMatrix {
  std::vector<std::string> activities;
  std::vector<PastaCandidate> candidates;
  CooccurrenceCounts counts;
  std::vector<std::vector<double>> npmi;   // undefined cells hold NaN
  std::vector<std::vector<bool>> defined;
};

/// Count activity/PaSta co-occurrence over all persons of a corpus. A person
/// counts once per activity, once per distinct (part type, verb) with the
/// verb anything other than "no_action", and once per co-occurring pair.
CooccurrenceCounts count_cooccurrence(const Corpus& corpus, const ActivityLabelSet& activities,
                                      const PaStaVocabulary& vocab);

/// NPMI with natural log and maximum-likelihood probabilities, no smoothing:
/// npmi = ln(p(a,p) / (p(a) p(p))) / (-ln p(a,p)). The p(a,p)=1 corner is
/// defined as 1 (perfect co-occurrence).
CooccurrenceMatrix compute_npmi(const CooccurrenceCounts& counts);

struct RankedCandidate {
  PastaCandidate candidate;
  double score;  // max over activities of the defined NPMI cells
};

/// Top-k candidates by max-over-activities NPMI, descending; ties broken by
/// lexicographic (part_type, verb). Candidates with no defined cell are not
/// part of the pool.
std::vector<RankedCandidate> select_pasta_candidates(const CooccurrenceMatrix& matrix,
                                                     std::size_t k);

struct ParsingTreeEdge {
  std::string activity;
  PastaCandidate pasta;
  double weight;  // NPMI
};

/// Activities are root nodes, PaSta are son nodes, edges carry co-occurrence.
struct ActivityParsingTree {
  double threshold;
  std::vector<ParsingTreeEdge> edges;
};

ActivityParsingTree build_parsing_tree(const CooccurrenceMatrix& matrix, double threshold);

void save_kb_json(const CooccurrenceMatrix& matrix, const std::string& path);
CooccurrenceMatrix load_kb_json(const std::string& path);
void save_tree_json(const ActivityParsingTree& tree, const std::string& path);

struct Disagreement {
  PartIndex part;
  std::string verb;
};

struct MergeResult {
  PastaLabels consensus;
  std::vector<Disagreement> disagreements;
};

/// Two-annotator consensus: per-part intersection; verbs present in exactly
/// one annotation are reported as disagreements; an empty consensus falls
/// back to {"no_action"}.
MergeResult merge_duplicate_annotations(const PastaLabels& first, const PastaLabels& second);

struct ImageLevelLabels {
  std::vector<std::uint8_t> activity_multi_hot;                 // over the label set
  std::array<std::vector<std::uint8_t>, kNumParts> pasta_multi_hot;  // per part, over its type's verbs
};

/// Elementwise union (logical OR) over the persons of an image.
ImageLevelLabels aggregate_image_level_labels(const ImageRecord& record,
                                              const ActivityLabelSet& activities,
                                              const PaStaVocabulary& vocab);

struct MilResult {
  std::vector<double> scores;
  bool empty_candidate_set = false;  // warning flag
};

/// Multiple-instance pooling: elementwise maximum over candidate score
/// vectors. The candidate set is expected to already be restricted to the
/// top max_persons x max_objects pairs by detector confidence.
MilResult mil_pool(const std::vector<std::vector<double>>& candidate_scores,
                   std::size_t vector_length);

inline constexpr std::size_t kMilMaxPersons = 3;
inline constexpr std::size_t kMilMaxObjects = 4;

/// attention_i = 1 iff part i has any verb other than "no_action".
std::array<int, kNumParts> derive_attention_labels(const PastaLabels& labels);

/// set@i = categories whose training count is <= i; thresholds must be
/// strictly increasing, and the resulting sets are nested.
std::vector<std::vector<std::string>> few_shot_split(
    const std::map<std::string, std::uint64_t>& train_counts,
    const std::vector<std::uint64_t>& thresholds);

}  // namespace pastanet::kb
