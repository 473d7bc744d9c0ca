#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pastanet/annotations.hpp"
#include "pastanet/kb.hpp"
#include "pastanet/vocabulary.hpp"

namespace pastanet::bench {

/// Desk-scale stand-in for backbone features: persons with part/object/
/// instance feature vectors whose part states are linearly recoverable
/// (Gaussian cluster centers on rotated one-hot directions with a minimum
/// margin), and activities implied by a deterministic PaSta-to-activity rule
/// table derived from a parsing tree.
struct SynthCorpusSpec {
  std::size_t train_persons = 2000;
  std::size_t eval_persons = 500;
  std::size_t num_activities = 12;
  std::size_t feature_dim = 64;   // width of f_p and f_o; must cover the largest verb list
  std::size_t instance_dim = 64;  // width of f_inst; must cover num_activities
  double noise_sigma = 0.0;
  double margin = 1.0;  // cluster center scale; must be positive
  std::size_t rule_pasta_min = 2, rule_pasta_max = 4;
  std::size_t extra_pasta_max = 2;  // random additional states per person
  std::uint64_t seed = 1;
};

struct SynthPerson {
  kb::PastaLabels pasta;
  std::vector<int> activity_ids;  // rule-table application
  std::string object_token;
  std::array<std::vector<float>, kNumParts> part_features;
  std::vector<float> object_feature;
  std::vector<float> instance_feature;
};

struct SynthRule {
  int activity_id;
  std::vector<kb::PastaCandidate> required;  // activity holds iff all present
};

struct SynthCorpus {
  SynthCorpusSpec spec;
  kb::ActivityLabelSet activities;  // num_activities names drawn from the defaults
  std::vector<SynthRule> rules;
  kb::ActivityParsingTree rule_tree;
  std::vector<SynthPerson> train;
  std::vector<SynthPerson> eval;
};

SynthCorpus synth_pasta_corpus(const SynthCorpusSpec& spec);

/// Image records (one person per image) for the annotation-facing surfaces.
kb::Corpus to_image_records(const SynthCorpus& corpus, bool eval_split);

/// Feature container entries named img/<id>/person/0/part<i>, .../object0
/// and .../instance, matching the checkpoint container format.
void save_feature_file(const SynthCorpus& corpus, bool eval_split, const std::string& path);

}  // namespace pastanet::bench
