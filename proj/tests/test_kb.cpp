#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "pastanet/kb.hpp"
#include "pastanet/rng.hpp"

using namespace pastanet;
using namespace pastanet::kb;

namespace {

// Brute-force NPMI: direct log arithmetic, independent of compute_npmi.
double npmi_oracle(std::uint64_t n, std::uint64_t ca, std::uint64_t cp, std::uint64_t cj) {
  double pj = double(cj) / double(n), pa = double(ca) / double(n), pp = double(cp) / double(n);
  if (pj >= 1.0) return 1.0;
  return std::log(pj / (pa * pp)) / (-std::log(pj));
}

CooccurrenceCounts make_counts(std::uint64_t n, std::vector<std::uint64_t> act,
                               std::vector<std::uint64_t> pasta,
                               std::vector<std::vector<std::uint64_t>> joint) {
  CooccurrenceCounts c;
  c.total = n;
  for (std::size_t i = 0; i < act.size(); ++i) c.activities.push_back("act" + std::to_string(i));
  for (std::size_t i = 0; i < pasta.size(); ++i)
    c.candidates.push_back({PartType::Hand, "verb" + std::to_string(i)});
  c.activity_count = std::move(act);
  c.pasta_count = std::move(pasta);
  c.joint = std::move(joint);
  return c;
}

}  // namespace

TEST_CASE("vocabulary sizes match the embedded inventory") {
  const auto& v = PaStaVocabulary::embedded_default();
  CHECK(v.size(PartType::Head) == 13);
  CHECK(v.size(PartType::Arm) == 5);
  CHECK(v.size(PartType::Hand) == 31);
  CHECK(v.size(PartType::Hip) == 5);
  CHECK(v.size(PartType::Thigh) == 10);
  CHECK(v.size(PartType::Foot) == 12);
  CHECK(v.total() == 76);
  for (int t = 0; t < kNumPartTypes; ++t)
    CHECK(v.verbs(static_cast<PartType>(t)).back() == kNoAction);
}

TEST_CASE("activity label set has 156 entries with 10 body motions") {
  const auto& s = ActivityLabelSet::embedded_default();
  CHECK(s.size() == 156);
  int motions = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.is_body_motion(i)) ++motions;
  CHECK(motions == 10);
  CHECK(s.index_of("ride") >= 0);
  CHECK(s.index_of("dance") >= 0);
}

TEST_CASE("part index to type mapping is total and pairs share types") {
  CHECK(part_type_of(PartIndex::RightHand) == part_type_of(PartIndex::LeftHand));
  CHECK(part_type_of(PartIndex::RightThigh) == part_type_of(PartIndex::LeftThigh));
  CHECK(part_type_of(PartIndex::Head) == PartType::Head);
  CHECK(part_type_of(PartIndex::Hip) == PartType::Hip);
}

TEST_CASE("npmi: perfect co-occurrence gives 1") {
  auto m = compute_npmi(make_counts(2, {1}, {1}, {{1}}));
  CHECK(m.defined[0][0]);
  CHECK(m.npmi[0][0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("npmi: exact independence gives 0") {
  auto m = compute_npmi(make_counts(4, {2}, {2}, {{1}}));
  CHECK(m.npmi[0][0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("npmi: zero joint count is absent") {
  auto m = compute_npmi(make_counts(5, {2}, {2}, {{0}}));
  CHECK_FALSE(m.defined[0][0]);
}

TEST_CASE("npmi: malformed counts are rejected") {
  CHECK_THROWS_AS(compute_npmi(make_counts(5, {1}, {3}, {{2}})), Error);
  CooccurrenceCounts empty = make_counts(1, {1}, {1}, {{1}});
  empty.total = 0;
  CHECK_THROWS_AS(compute_npmi(empty), Error);
}

TEST_CASE("npmi matches the brute-force oracle on random tables") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::uint64_t n = 1 + rng.uniform_int(500);
    std::vector<std::uint64_t> act(3), pasta(4);
    for (auto& a : act) a = 1 + rng.uniform_int(n);
    for (auto& p : pasta) p = 1 + rng.uniform_int(n);
    std::vector<std::vector<std::uint64_t>> joint(3, std::vector<std::uint64_t>(4));
    for (int a = 0; a < 3; ++a)
      for (int p = 0; p < 4; ++p) joint[a][p] = rng.uniform_int(std::min(act[a], pasta[p]) + 1);
    auto m = compute_npmi(make_counts(n, act, pasta, joint));
    for (int a = 0; a < 3; ++a)
      for (int p = 0; p < 4; ++p) {
        if (joint[a][p] == 0) {
          CHECK_FALSE(m.defined[a][p]);
        } else {
          CHECK(m.npmi[a][p] ==
                doctest::Approx(npmi_oracle(n, act[a], pasta[p], joint[a][p])).epsilon(1e-12));
          CHECK(m.npmi[a][p] <= 1.0 + 1e-12);
          CHECK(m.npmi[a][p] >= -1.0 - 1e-12);
        }
      }
  }
}

TEST_CASE("candidate selection sorts by max-over-activities with lexicographic ties") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uint64_t n = 50;
    std::vector<std::uint64_t> act(3, 10);
    std::vector<std::uint64_t> pasta(6, 10);
    std::vector<std::vector<std::uint64_t>> joint(3, std::vector<std::uint64_t>(6));
    for (auto& row : joint)
      for (auto& j : row) j = rng.uniform_int(11);
    auto m = compute_npmi(make_counts(n, act, pasta, joint));

    // Full-sort oracle.
    struct Entry {
      double score;
      PastaCandidate cand;
    };
    std::vector<Entry> oracle;
    for (std::size_t p = 0; p < m.candidates.size(); ++p) {
      double best = -2;
      bool any = false;
      for (std::size_t a = 0; a < m.activities.size(); ++a)
        if (m.defined[a][p]) {
          any = true;
          best = std::max(best, m.npmi[a][p]);
        }
      if (any) oracle.push_back({best, m.candidates[p]});
    }
    std::sort(oracle.begin(), oracle.end(), [](const Entry& x, const Entry& y) {
      if (x.score != y.score) return x.score > y.score;
      return x.cand < y.cand;
    });
    std::size_t k = std::min<std::size_t>(5, oracle.size());
    auto got = select_pasta_candidates(m, k);
    REQUIRE(got.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(got[i].candidate.verb == oracle[i].cand.verb);
      CHECK(got[i].score == doctest::Approx(oracle[i].score));
    }
  }
}

TEST_CASE("candidate selection: k=0 and oversized k") {
  auto m = compute_npmi(make_counts(4, {2}, {2}, {{1}}));
  CHECK(select_pasta_candidates(m, 0).empty());
  CHECK_THROWS_AS(select_pasta_candidates(m, 2), Error);
}

TEST_CASE("parsing tree edge set equals the brute-force filter") {
  Rng rng(13);
  std::vector<std::uint64_t> act(4, 20), pasta(5, 20);
  std::vector<std::vector<std::uint64_t>> joint(4, std::vector<std::uint64_t>(5));
  for (auto& row : joint)
    for (auto& j : row) j = rng.uniform_int(21);
  auto m = compute_npmi(make_counts(100, act, pasta, joint));

  for (double thr : {-1.0, 0.3, 1.0}) {
    auto tree = build_parsing_tree(m, thr);
    std::size_t expect = 0;
    for (std::size_t a = 0; a < m.activities.size(); ++a)
      for (std::size_t p = 0; p < m.candidates.size(); ++p)
        if (m.defined[a][p] && m.npmi[a][p] >= thr) ++expect;
    CHECK(tree.edges.size() == expect);
    for (const auto& e : tree.edges) CHECK(e.weight >= thr);
  }
  CHECK_THROWS_AS(build_parsing_tree(m, 1.5), Error);
}

TEST_CASE("merge_duplicate_annotations: intersection with disagreement report") {
  PastaLabels a, b;
  a[3] = {"hold", "lift"};
  b[3] = {"hold"};
  auto r = merge_duplicate_annotations(a, b);
  CHECK(r.consensus[3] == std::set<std::string>{"hold"});
  REQUIRE(r.disagreements.size() == 1);
  CHECK(r.disagreements[0].verb == "lift");
  CHECK(r.disagreements[0].part == PartIndex::RightHand);
  // Parts with no consensus fall back to no_action.
  CHECK(r.consensus[0] == std::set<std::string>{kNoAction});
}

TEST_CASE("merge_duplicate_annotations: identity and commutativity") {
  Rng rng(21);
  const auto& vocab = PaStaVocabulary::embedded_default();
  for (int trial = 0; trial < 1000; ++trial) {
    PastaLabels a, b;
    for (int p = 0; p < kNumParts; ++p) {
      PartType t = part_type_of(static_cast<PartIndex>(p));
      const auto& verbs = vocab.verbs(t);
      for (int k = 0; k < 3; ++k) {
        if (rng.uniform() < 0.4) a[p].insert(verbs[rng.uniform_int(verbs.size())]);
        if (rng.uniform() < 0.4) b[p].insert(verbs[rng.uniform_int(verbs.size())]);
      }
    }
    auto ab = merge_duplicate_annotations(a, b);
    auto ba = merge_duplicate_annotations(b, a);
    CHECK(ab.consensus == ba.consensus);
    CHECK(ab.disagreements.size() == ba.disagreements.size());
    //

    // Set-algebra oracle: consensus is the per-part intersection (or
    // no_action), disagreements the symmetric difference.
    for (int p = 0; p < kNumParts; ++p) {
      std::set<std::string> expect;
      for (const auto& v : a[p])
        if (b[p].count(v)) expect.insert(v);
      if (expect.empty()) expect.insert(kNoAction);
      CHECK(ab.consensus[p] == expect);
    }
    std::size_t sym_diff = 0;
    for (int p = 0; p < kNumParts; ++p) {
      for (const auto& v : a[p]) sym_diff += b[p].count(v) ? 0 : 1;
      for (const auto& v : b[p]) sym_diff += a[p].count(v) ? 0 : 1;
    }
    CHECK(ab.disagreements.size() == sym_diff);
    auto same = merge_duplicate_annotations(a, a);
    CHECK(same.disagreements.empty());
  }
}

TEST_CASE("aggregate_image_level_labels unions over persons and is idempotent") {
  const auto& vocab = PaStaVocabulary::embedded_default();
  const auto& acts = ActivityLabelSet::embedded_default();
  ImageRecord rec;
  rec.image_id = "img0";
  rec.width = rec.height = 100;
  PersonAnnotation p1, p2;
  p1.person_box = Box(0, 0, 10, 10);
  p2.person_box = Box(20, 20, 30, 30);
  p1.activities = {"ride"};
  p2.activities = {"ride", "hold"};
  p1.pasta_labels[3].insert("hold");
  p2.pasta_labels[0].insert("eat");
  rec.persons = {p1, p2};

  auto labels = aggregate_image_level_labels(rec, acts, vocab);
  CHECK(labels.activity_multi_hot[acts.index_of("ride")] == 1);
  CHECK(labels.activity_multi_hot[acts.index_of("hold")] == 1);
  CHECK(labels.activity_multi_hot[acts.index_of("eat")] == 0);  // pasta verb, not an activity here
  CHECK(labels.pasta_multi_hot[3][vocab.verb_index(PartType::Hand, "hold")] == 1);
  CHECK(labels.pasta_multi_hot[0][vocab.verb_index(PartType::Head, "eat")] == 1);

  // Empty image -> zero vectors.
  ImageRecord empty;
  empty.image_id = "e";
  empty.width = empty.height = 10;
  auto zero = aggregate_image_level_labels(empty, acts, vocab);
  for (auto v : zero.activity_multi_hot) CHECK(v == 0);

  // Person duplication does not change the union.
  rec.persons.push_back(p1);
  auto dup = aggregate_image_level_labels(rec, acts, vocab);
  CHECK(dup.activity_multi_hot == labels.activity_multi_hot);
  for (int p = 0; p < kNumParts; ++p) CHECK(dup.pasta_multi_hot[p] == labels.pasta_multi_hot[p]);
}

TEST_CASE("mil_pool is the elementwise max; empty set flags a warning") {
  auto r = mil_pool({{0.2}, {0.9}, {0.5}}, 1);
  CHECK(r.scores == std::vector<double>{0.9});
  CHECK_FALSE(r.empty_candidate_set);

  auto empty = mil_pool({}, 3);
  CHECK(empty.empty_candidate_set);
  CHECK(empty.scores == std::vector<double>(3, 0.0));

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t k = 1 + rng.uniform_int(kMilMaxPersons * kMilMaxObjects);
    std::size_t w = 1 + rng.uniform_int(10);
    std::vector<std::vector<double>> scores(k, std::vector<double>(w));
    for (auto& row : scores)
      for (auto& v : row) v = rng.uniform();
    auto pooled = mil_pool(scores, w);
    for (std::size_t j = 0; j < w; ++j) {
      double expect = 0;
      for (std::size_t i = 0; i < k; ++i) expect = std::max(expect, scores[i][j]);
      CHECK(pooled.scores[j] == expect);
    }
  }
  CHECK_THROWS_AS(mil_pool({{0.1}, {0.1, 0.2}}, 1), Error);
}

TEST_CASE("derive_attention_labels follows the no_action rule") {
  PastaLabels labels;
  labels[3] = {kNoAction};
  auto att = derive_attention_labels(labels);
  CHECK(att[3] == 0);
  labels[3] = {"hold"};
  CHECK(derive_attention_labels(labels)[3] == 1);
  labels[3] = {kNoAction, "hold"};
  CHECK(derive_attention_labels(labels)[3] == 1);
}

TEST_CASE("few_shot_split: direct filter and nested sets") {
  std::map<std::string, std::uint64_t> counts = {{"a", 1}, {"b", 4}, {"c", 7}, {"d", 20}};
  auto sets = few_shot_split(counts, {1, 5, 10});
  CHECK(sets[0] == std::vector<std::string>{"a"});
  CHECK(sets[1] == std::vector<std::string>{"a", "b"});
  CHECK(sets[2] == std::vector<std::string>{"a", "b", "c"});

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, std::uint64_t> c;
    for (int i = 0; i < 12; ++i) c["x" + std::to_string(i)] = rng.uniform_int(25);
    auto s = few_shot_split(c, {2, 6, 11, 19});
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (const auto& [name, count] : c) {
        bool present = std::find(s[i].begin(), s[i].end(), name) != s[i].end();
        CHECK(present == (count <= std::vector<std::uint64_t>{2, 6, 11, 19}[i]));
      }
      if (i > 0)
        for (const auto& name : s[i - 1])
          CHECK(std::find(s[i].begin(), s[i].end(), name) != s[i].end());
    }
  }
  CHECK_THROWS_AS(few_shot_split(counts, {5, 5}), Error);
}

TEST_CASE("corpus jsonl round trip with validation") {
  const auto& vocab = PaStaVocabulary::embedded_default();
  std::string path = "test_corpus.jsonl";
  {
    std::ofstream out(path);
    out << R"({"image_id":"a","width":100,"height":80,"persons":[{"person_box":[1,2,50,60],)"
        << R"("activities":["ride"],"objects":[{"box":[5,5,20,20],"class":"horse"}],)"
        << R"("part_boxes":[[[1,2,9,9],true],null,null,null,null,null,null,null,null,null],)"
        << R"("pasta":[["eat"],[],[],["hold"],[],[],[],[],[],[]]}]})"
        << "\n";
  }
  auto corpus = load_corpus_jsonl(path, vocab);
  REQUIRE(corpus.images.size() == 1);
  const auto& person = corpus.images[0].persons[0];
  CHECK(person.activities.count("ride") == 1);
  CHECK(person.pasta_labels[0].count("eat") == 1);
  CHECK(person.pasta_labels[3].count("hold") == 1);
  CHECK(person.part_boxes[0].visible);
  CHECK(person.interacted_objects[0].object_class == "horse");

  save_corpus_jsonl(corpus, path + ".resaved");
  auto again = load_corpus_jsonl(path + ".resaved", vocab);
  CHECK(again.images[0].persons[0].pasta_labels == person.pasta_labels);

  // Illegal verb for the part type is rejected.
  {
    std::ofstream out(path);
    out << R"({"image_id":"a","width":100,"height":80,"persons":[{"person_box":[1,2,50,60],)"
        << R"("activities":[],"objects":[],"pasta":[["hold"],[],[],[],[],[],[],[],[],[]]}]})"
        << "\n";  // "hold" is a hand verb, not a head verb
  }
  CHECK_THROWS_AS(load_corpus_jsonl(path, vocab), Error);
  std::remove(path.c_str());
  std::remove((path + ".resaved").c_str());
}

TEST_CASE("kb json round trip preserves the matrix") {
  Rng rng(5);
  std::vector<std::uint64_t> act(2, 10), pasta(3, 10);
  std::vector<std::vector<std::uint64_t>> joint(2, std::vector<std::uint64_t>(3));
  for (auto& row : joint)
    for (auto& j : row) j = rng.uniform_int(11);
  auto m = compute_npmi(make_counts(40, act, pasta, joint));
  save_kb_json(m, "test_kb.json");
  auto loaded = load_kb_json("test_kb.json");
  for (std::size_t a = 0; a < m.activities.size(); ++a)
    for (std::size_t p = 0; p < m.candidates.size(); ++p) {
      CHECK(loaded.defined[a][p] == m.defined[a][p]);
      if (m.defined[a][p]) CHECK(loaded.npmi[a][p] == doctest::Approx(m.npmi[a][p]).epsilon(1e-12));
    }
  std::remove("test_kb.json");
}
