#include "pastanet/synth_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pastanet/rng.hpp"
#include "pastanet/tensorfile.hpp"

namespace pastanet::bench {

namespace {

// Seeded orthonormal direction set: Gram-Schmidt over Gaussian columns.
// Column k is the cluster center direction of class k.
std::vector<std::vector<float>> orthonormal_directions(Rng rng, std::size_t dim,
                                                       std::size_t count) {
  if (count > dim) throw usage_error("feature dimension too small for the class count");
  std::vector<std::vector<double>> cols(count, std::vector<double>(dim));
  for (auto& c : cols)
    for (auto& x : c) x = rng.normal();
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0;
      for (std::size_t i = 0; i < dim; ++i) dot += cols[k][i] * cols[j][i];
      for (std::size_t i = 0; i < dim; ++i) cols[k][i] -= dot * cols[j][i];
    }
    double norm = 0;
    for (double x : cols[k]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw numeric_error("degenerate direction during orthonormalization");
    for (auto& x : cols[k]) x /= norm;
  }
  std::vector<std::vector<float>> out(count, std::vector<float>(dim));
  for (std::size_t k = 0; k < count; ++k)
    for (std::size_t i = 0; i < dim; ++i) out[k][i] = static_cast<float>(cols[k][i]);
  return out;
}

}  // namespace

SynthCorpus synth_pasta_corpus(const SynthCorpusSpec& spec) {
  if (!(spec.margin > 0)) throw usage_error("synth corpus margin must be positive");
  if (spec.rule_pasta_min < 1 || spec.rule_pasta_max < spec.rule_pasta_min)
    throw usage_error("invalid rule size range");

  const auto& vocab = kb::PaStaVocabulary::embedded_default();
  const auto& full_labels = kb::ActivityLabelSet::embedded_default();
  if (spec.num_activities == 0 || spec.num_activities > full_labels.size())
    throw usage_error("num_activities out of range");

  SynthCorpus corpus;
  corpus.spec = spec;

  // Deterministic activity subset: evenly spaced over the default label set.
  {
    std::vector<std::string> names;
    std::vector<bool> motion;
    std::size_t stride = full_labels.size() / spec.num_activities;
    for (std::size_t i = 0; i < spec.num_activities; ++i) {
      std::size_t src = i * stride;
      names.push_back(full_labels.name(src));
      motion.push_back(false);  // synthetic persons always interact with an object token
    }
    corpus.activities = kb::ActivityLabelSet::from_names(std::move(names), std::move(motion));
  }

  Rng master(spec.seed);

  // Candidate pool of active (part type, verb) states.
  std::vector<kb::PastaCandidate> pool;
  for (int t = 0; t < kNumPartTypes; ++t)
    for (const auto& v : vocab.verbs(static_cast<PartType>(t)))
      if (v != kb::kNoAction) pool.push_back({static_cast<PartType>(t), v});

  // Rule table: each activity requires a distinct small PaSta set.
  {
    Rng rng = master.stream("rules");
    std::set<std::vector<std::size_t>> used;
    for (std::size_t a = 0; a < spec.num_activities; ++a) {
      std::vector<std::size_t> picks;
      do {
        picks.clear();
        std::size_t count = spec.rule_pasta_min +
                            rng.uniform_int(spec.rule_pasta_max - spec.rule_pasta_min + 1);
        std::set<std::size_t> chosen;
        while (chosen.size() < count) chosen.insert(rng.uniform_int(pool.size()));
        picks.assign(chosen.begin(), chosen.end());
      } while (!used.insert(picks).second);
      SynthRule rule;
      rule.activity_id = static_cast<int>(a);
      for (auto idx : picks) rule.required.push_back(pool[idx]);
      corpus.rules.push_back(std::move(rule));
    }
  }

  // The rule table doubles as the parsing tree: activity roots, PaSta sons.
  corpus.rule_tree.threshold = 1.0;
  for (const auto& rule : corpus.rules)
    for (const auto& c : rule.required)
      corpus.rule_tree.edges.push_back({corpus.activities.name(rule.activity_id), c, 1.0});

  // Cluster center directions per part type and for object/instance tokens.
  std::array<std::vector<std::vector<float>>, kNumPartTypes> part_dirs;
  for (int t = 0; t < kNumPartTypes; ++t) {
    std::size_t n_verbs = vocab.size(static_cast<PartType>(t));
    if (spec.feature_dim < n_verbs)
      throw usage_error("feature_dim must be >= the largest per-part verb count");
    part_dirs[t] = orthonormal_directions(master.stream("dirs/part", t), spec.feature_dim, n_verbs);
  }
  constexpr std::size_t kObjectTokens = 4;
  auto object_dirs =
      orthonormal_directions(master.stream("dirs/object"), spec.feature_dim, kObjectTokens);
  if (spec.instance_dim < spec.num_activities)
    throw usage_error("instance_dim must be >= num_activities");
  auto inst_dirs = orthonormal_directions(master.stream("dirs/instance"), spec.instance_dim,
                                          spec.num_activities);

  auto make_split = [&](std::size_t count, const char* split) {
    std::vector<SynthPerson> persons;
    persons.reserve(count);
    Rng rng = master.stream(split);
    for (std::size_t i = 0; i < count; ++i) {
      SynthPerson person;
      const SynthRule& primary = corpus.rules[rng.uniform_int(corpus.rules.size())];

      std::set<kb::PastaCandidate> states(primary.required.begin(), primary.required.end());
      std::size_t extras = rng.uniform_int(spec.extra_pasta_max + 1);
      for (std::size_t e = 0; e < extras; ++e) states.insert(pool[rng.uniform_int(pool.size())]);

      // Per-part verb sets; untouched parts carry no_action.
      for (int p = 0; p < kNumParts; ++p) person.pasta[p].insert(kb::kNoAction);
      for (const auto& st : states) {
        // A state lands on one concrete part of its type (the right-side
        // part for paired types, deterministically).
        for (int p = 0; p < kNumParts; ++p) {
          if (part_type_of(static_cast<PartIndex>(p)) == st.part_type) {
            person.pasta[p].erase(kb::kNoAction);
            person.pasta[p].insert(st.verb);
            break;
          }
        }
      }

      // Activities by rule application.
      auto has_state = [&](const kb::PastaCandidate& c) {
        for (int p = 0; p < kNumParts; ++p)
          if (part_type_of(static_cast<PartIndex>(p)) == c.part_type &&
              person.pasta[p].count(c.verb))
            return true;
        return false;
      };
      for (const auto& rule : corpus.rules) {
        bool all = true;
        for (const auto& c : rule.required)
          if (!has_state(c)) all = false;
        if (all) person.activity_ids.push_back(rule.activity_id);
      }

      std::size_t obj = rng.uniform_int(kObjectTokens);
      person.object_token = "obj_" + std::to_string(obj);

      // Features: sum of active cluster centers plus optional noise.
      for (int p = 0; p < kNumParts; ++p) {
        int t = static_cast<int>(part_type_of(static_cast<PartIndex>(p)));
        std::vector<float> f(spec.feature_dim, 0.0f);
        for (const auto& verb : person.pasta[p]) {
          int k = vocab.verb_index(static_cast<PartType>(t), verb);
          for (std::size_t j = 0; j < spec.feature_dim; ++j)
            f[j] += static_cast<float>(spec.margin) * part_dirs[t][static_cast<std::size_t>(k)][j];
        }
        for (auto& x : f) x += static_cast<float>(spec.noise_sigma * rng.normal());
        person.part_features[p] = std::move(f);
      }
      person.object_feature.assign(spec.feature_dim, 0.0f);
      for (std::size_t j = 0; j < spec.feature_dim; ++j)
        person.object_feature[j] =
            static_cast<float>(spec.margin) * object_dirs[obj][j] +
            static_cast<float>(spec.noise_sigma * rng.normal());
      person.instance_feature.assign(spec.instance_dim, 0.0f);
      for (int a : person.activity_ids)
        for (std::size_t j = 0; j < spec.instance_dim; ++j)
          person.instance_feature[j] +=
              static_cast<float>(spec.margin) * inst_dirs[static_cast<std::size_t>(a)][j];
      for (auto& x : person.instance_feature)
        x += static_cast<float>(spec.noise_sigma * rng.normal());

      persons.push_back(std::move(person));
    }
    return persons;
  };

  corpus.train = make_split(spec.train_persons, "train");
  corpus.eval = make_split(spec.eval_persons, "eval");
  return corpus;
}

kb::Corpus to_image_records(const SynthCorpus& corpus, bool eval_split) {
  const auto& persons = eval_split ? corpus.eval : corpus.train;
  kb::Corpus out;
  const double canvas = 256;
  for (std::size_t i = 0; i < persons.size(); ++i) {
    const SynthPerson& sp = persons[i];
    kb::ImageRecord rec;
    rec.image_id = std::string(eval_split ? "synth_eval_" : "synth_train_") + std::to_string(i);
    rec.width = canvas;
    rec.height = canvas;
    kb::PersonAnnotation person;
    person.person_box = Box(8, 8, 192, 248);
    for (int a : sp.activity_ids) person.activities.insert(corpus.activities.name(a));
    person.interacted_objects.push_back({Box(160, 96, 224, 160), sp.object_token});
    for (int p = 0; p < kNumParts; ++p) {
      double y = 16.0 + 20.0 * p;
      person.part_boxes[p].box = Box(16, y, 48, y + 16);
      person.part_boxes[p].visible = true;
      person.pasta_labels[p] = sp.pasta[p];
    }
    rec.persons.push_back(std::move(person));
    out.images.push_back(std::move(rec));
  }
  return out;
}

void save_feature_file(const SynthCorpus& corpus, bool eval_split, const std::string& path) {
  const auto& persons = eval_split ? corpus.eval : corpus.train;
  std::vector<diff::NamedTensor> tensors;
  for (std::size_t i = 0; i < persons.size(); ++i) {
    const SynthPerson& sp = persons[i];
    std::string base = std::string("img/") +
                       (eval_split ? "synth_eval_" : "synth_train_") + std::to_string(i) +
                       "/person/0/";
    for (int p = 0; p < kNumParts; ++p) {
      diff::TensorF t({sp.part_features[p].size()}, sp.part_features[p]);
      tensors.push_back({base + "part" + std::to_string(p), std::move(t)});
    }
    tensors.push_back({base + "object0", diff::TensorF({sp.object_feature.size()}, sp.object_feature)});
    tensors.push_back(
        {base + "instance", diff::TensorF({sp.instance_feature.size()}, sp.instance_feature)});
  }
  diff::save_tensor_file(tensors, path);
}

}  // namespace pastanet::bench
