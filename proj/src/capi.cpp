#include "pastanet/capi.h"

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "pastanet/annotations.hpp"
#include "pastanet/geometry.hpp"
#include "pastanet/kb.hpp"
#include "pastanet/metrics.hpp"
#include "pastanet/mnist_action.hpp"
#include "pastanet/pipeline.hpp"
#include "pastanet/report.hpp"
#include "pastanet/selftest.hpp"
#include "pastanet/synth_corpus.hpp"
#include "pastanet/vocabulary.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace pastanet;

namespace {

thread_local std::string g_last_error;

char* string_new(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

pastanet_status status_of(const Error& e) {
  switch (e.kind) {
    case Error::Kind::Usage: return PASTANET_ERR_USAGE;
    case Error::Kind::Data: return PASTANET_ERR_DATA;
    case Error::Kind::Numeric: return PASTANET_ERR_NUMERIC;
    case Error::Kind::Internal: return PASTANET_ERR_INTERNAL;
  }
  return PASTANET_ERR_INTERNAL;
}

template <typename Fn>
pastanet_status wrap(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PASTANET_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return PASTANET_ERR_USAGE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PASTANET_ERR_INTERNAL;
  }
}

json parse_config(const char* config_json) {
  if (!config_json) throw usage_error("null config");
  return json::parse(config_json);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw usage_error("unknown config key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::string require_str(const json& j, const char* key) {
  if (!j.contains(key)) throw usage_error(std::string("missing config key '") + key + "'");
  return j.at(key).get<std::string>();
}

PartType part_type_by_name(const char* name) {
  for (int t = 0; t < kNumPartTypes; ++t)
    if (std::string_view(name) == kPartTypeNames[t]) return static_cast<PartType>(t);
  throw usage_error("unknown part type '" + std::string(name) + "'");
}

eval::MetricReport base_report(const json& cfg, std::uint64_t seed) {
  eval::MetricReport r;
  r.config_json = cfg.dump();
  r.config_hash = eval::config_hash_hex(r.config_json);
  r.seed = seed;
  if (get_or<bool>(cfg, "stamp", false)) r.timestamp = eval::iso_utc_now();
  return r;
}

}  // namespace

extern "C" {

const char* pastanet_version(void) { return "0.1.0"; }
const char* pastanet_last_error(void) { return g_last_error.c_str(); }
void pastanet_string_free(char* s) { delete[] s; }

// ----------------------------------------------------------------- vocab --

struct pastanet_vocab {
  kb::PaStaVocabulary value;
};

pastanet_status pastanet_vocab_default(pastanet_vocab** out) {
  return wrap([&] {
    if (!out) throw usage_error("null output pointer");
    *out = new pastanet_vocab{kb::PaStaVocabulary::embedded_default()};
  });
}

pastanet_status pastanet_vocab_load_json(const char* path, pastanet_vocab** out) {
  return wrap([&] {
    if (!path || !out) throw usage_error("null argument");
    *out = new pastanet_vocab{kb::PaStaVocabulary::load_json(path)};
  });
}

pastanet_status pastanet_vocab_save_json(const pastanet_vocab* vocab, const char* path) {
  return wrap([&] {
    if (!vocab || !path) throw usage_error("null argument");
    vocab->value.save_json(path);
  });
}

void pastanet_vocab_free(pastanet_vocab* vocab) { delete vocab; }

int pastanet_vocab_total(const pastanet_vocab* vocab) {
  return vocab ? static_cast<int>(vocab->value.total()) : -1;
}

int pastanet_vocab_size(const pastanet_vocab* vocab, const char* part_type) {
  if (!vocab || !part_type) return -1;
  try {
    return static_cast<int>(vocab->value.size(part_type_by_name(part_type)));
  } catch (const Error&) {
    return -1;
  }
}

// --------------------------------------------------------- corpus and kb --

struct pastanet_corpus {
  kb::Corpus value;
};

pastanet_status pastanet_corpus_load_jsonl(const char* path, const pastanet_vocab* vocab,
                                           pastanet_corpus** out) {
  return wrap([&] {
    if (!path || !vocab || !out) throw usage_error("null argument");
    *out = new pastanet_corpus{kb::load_corpus_jsonl(path, vocab->value)};
  });
}

void pastanet_corpus_free(pastanet_corpus* corpus) { delete corpus; }

size_t pastanet_corpus_num_images(const pastanet_corpus* corpus) {
  return corpus ? corpus->value.images.size() : 0;
}

size_t pastanet_corpus_num_persons(const pastanet_corpus* corpus) {
  if (!corpus) return 0;
  size_t n = 0;
  for (const auto& img : corpus->value.images) n += img.persons.size();
  return n;
}

struct pastanet_kb {
  kb::CooccurrenceMatrix value;
};

pastanet_status pastanet_kb_build(const pastanet_corpus* corpus, const pastanet_vocab* vocab,
                                  pastanet_kb** out) {
  return wrap([&] {
    if (!corpus || !vocab || !out) throw usage_error("null argument");
    auto counts = kb::count_cooccurrence(corpus->value, kb::ActivityLabelSet::embedded_default(),
                                         vocab->value);
    *out = new pastanet_kb{kb::compute_npmi(counts)};
  });
}

pastanet_status pastanet_kb_load_json(const char* path, pastanet_kb** out) {
  return wrap([&] {
    if (!path || !out) throw usage_error("null argument");
    *out = new pastanet_kb{kb::load_kb_json(path)};
  });
}

void pastanet_kb_free(pastanet_kb* handle) { delete handle; }

pastanet_status pastanet_kb_save_json(const pastanet_kb* handle, const char* path) {
  return wrap([&] {
    if (!handle || !path) throw usage_error("null argument");
    kb::save_kb_json(handle->value, path);
  });
}

pastanet_status pastanet_kb_npmi(const pastanet_kb* handle, const char* activity,
                                 const char* part_type, const char* verb, double* out_value,
                                 int* out_defined) {
  return wrap([&] {
    if (!handle || !activity || !part_type || !verb || !out_value || !out_defined)
      throw usage_error("null argument");
    const auto& m = handle->value;
    kb::PastaCandidate cand{part_type_by_name(part_type), verb};
    std::size_t a = m.activities.size(), p = m.candidates.size();
    for (std::size_t i = 0; i < m.activities.size(); ++i)
      if (m.activities[i] == activity) a = i;
    for (std::size_t i = 0; i < m.candidates.size(); ++i)
      if (m.candidates[i] == cand) p = i;
    if (a == m.activities.size()) throw data_error("unknown activity '" + std::string(activity) + "'");
    if (p == m.candidates.size()) throw data_error("unknown candidate '" + std::string(verb) + "'");
    *out_defined = m.defined[a][p] ? 1 : 0;
    if (m.defined[a][p]) *out_value = m.npmi[a][p];
  });
}

pastanet_status pastanet_kb_save_tree_json(const pastanet_kb* handle, double threshold,
                                           const char* path) {
  return wrap([&] {
    if (!handle || !path) throw usage_error("null argument");
    kb::save_tree_json(kb::build_parsing_tree(handle->value, threshold), path);
  });
}

pastanet_status pastanet_kb_select_candidates(const pastanet_kb* handle, size_t k,
                                              char** json_out) {
  return wrap([&] {
    if (!handle || !json_out) throw usage_error("null argument");
    auto ranked = kb::select_pasta_candidates(handle->value, k);
    json arr = json::array();
    for (const auto& r : ranked)
      arr.push_back({{"part_type", kPartTypeNames[static_cast<int>(r.candidate.part_type)]},
                     {"verb", r.candidate.verb},
                     {"score", r.score}});
    *json_out = string_new(arr.dump());
  });
}

// --------------------------------------------------------------- geometry --

pastanet_status pastanet_part_boxes(const double joints[51], double visibility_threshold,
                                    const double scale[6], double image_width,
                                    double image_height, double out_boxes[40],
                                    int out_visible[10]) {
  return wrap([&] {
    if (!joints || !out_boxes || !out_visible) throw usage_error("null argument");
    std::array<Keypoint, kNumJoints> kp;
    for (int i = 0; i < kNumJoints; ++i)
      kp[i] = Keypoint{joints[3 * i], joints[3 * i + 1], joints[3 * i + 2]};
    geom::PartBoxConfig cfg;
    cfg.visibility_threshold = visibility_threshold;
    if (scale)
      for (int t = 0; t < kNumPartTypes; ++t) cfg.scale[t] = scale[t];
    auto result = geom::generate_part_boxes(kp, cfg, image_width, image_height);
    for (int p = 0; p < kNumParts; ++p) {
      out_visible[p] = result.visible[p] ? 1 : 0;
      if (result.boxes[p]) {
        out_boxes[4 * p] = result.boxes[p]->x1;
        out_boxes[4 * p + 1] = result.boxes[p]->y1;
        out_boxes[4 * p + 2] = result.boxes[p]->x2;
        out_boxes[4 * p + 3] = result.boxes[p]->y2;
      } else {
        out_boxes[4 * p] = out_boxes[4 * p + 1] = out_boxes[4 * p + 2] = out_boxes[4 * p + 3] = 0;
      }
    }
  });
}

double pastanet_box_iou(const double a[4], const double b[4]) {
  if (!a || !b) return -1;
  try {
    return geom::iou(Box(a[0], a[1], a[2], a[3]), Box(b[0], b[1], b[2], b[3]));
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return -1;
  }
}

// ---------------------------------------------------------------- metrics --

pastanet_status pastanet_average_precision(const double* scores, const int* labels, size_t n,
                                           double* out_ap, int* out_defined) {
  return wrap([&] {
    if (!scores || !labels || !out_ap || !out_defined) throw usage_error("null argument");
    std::vector<double> s(scores, scores + n);
    std::vector<int> l(labels, labels + n);
    auto ap = eval::average_precision(s, l);
    *out_defined = ap.has_value() ? 1 : 0;
    if (ap) *out_ap = *ap;
  });
}

// ------------------------------------------------ command-level commands --

static bench::MnistActionConfig mnist_config_from_json(const json& cfg) {
  bench::MnistActionConfig mc;
  mc.seed = get_or<std::uint64_t>(cfg, "seed", 1);
  mc.train_size = get_or<std::size_t>(cfg, "train_size", mc.train_size);
  mc.test_size = get_or<std::size_t>(cfg, "test_size", mc.test_size);
  mc.noise_sigma = get_or<double>(cfg, "noise_sigma", mc.noise_sigma);
  mc.overlap_cap = get_or<double>(cfg, "overlap_cap", mc.overlap_cap);
  mc.epochs = get_or<std::size_t>(cfg, "epochs", mc.epochs);
  mc.instance_lr = get_or<double>(cfg, "instance_lr", mc.instance_lr);
  mc.instance_batch = get_or<std::size_t>(cfg, "instance_batch", mc.instance_batch);
  mc.hierarchical_lr = get_or<double>(cfg, "hierarchical_lr", mc.hierarchical_lr);
  mc.hierarchical_batch = get_or<std::size_t>(cfg, "hierarchical_batch", mc.hierarchical_batch);
  mc.jobs = get_or<std::size_t>(cfg, "jobs", 1);
  return mc;
}

pastanet_status pastanet_mnist_gen(const char* config_json, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    json cfg = parse_config(config_json);
    check_keys(cfg, {"seed", "train_size", "test_size", "noise_sigma", "overlap_cap", "out",
                     "digits_per_class", "jobs", "stamp"});
    bench::MnistActionConfig mc = mnist_config_from_json(cfg);
    std::string out_dir = require_str(cfg, "out");
    fs::create_directories(out_dir);

    bench::DigitPool pool =
        bench::synth_digit_pool(mc.seed, get_or<std::size_t>(cfg, "digits_per_class", 200));
    bench::save_idx_images(pool.images, out_dir + "/digits-images.idx");
    bench::save_idx_labels(pool.labels, out_dir + "/digits-labels.idx");

    auto train = bench::generate_dataset(mc, pool, "train", mc.train_size);
    auto test = bench::generate_dataset(mc, pool, "test", mc.test_size);
    bench::save_dataset(train, out_dir + "/train-images.idx", out_dir + "/train-scenes.jsonl");
    bench::save_dataset(test, out_dir + "/test-images.idx", out_dir + "/test-scenes.jsonl");

    eval::MetricReport rep = base_report(cfg, mc.seed);
    rep.metrics["train_scenes"] = static_cast<double>(train.size());
    rep.metrics["test_scenes"] = static_cast<double>(test.size());
    rep.metrics["placement_resamples"] = static_cast<double>(train.resamples + test.resamples);
    for (const auto& spec : train.specs)
      rep.category_counts["label_" + std::to_string(spec.label)]++;
    *report_json = string_new(rep.to_json());
  });
}

pastanet_status pastanet_mnist_train(const char* config_json, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    json cfg = parse_config(config_json);
    check_keys(cfg, {"seed", "variant", "epochs", "train_size", "test_size", "noise_sigma",
                     "overlap_cap", "data", "digits_per_class", "instance_lr", "instance_batch",
                     "hierarchical_lr", "hierarchical_batch", "checkpoint_out", "jobs", "stamp"});
    bench::MnistActionConfig mc = mnist_config_from_json(cfg);
    bench::MnistVariant variant = bench::mnist_variant_from_string(require_str(cfg, "variant"));

    bench::MnistDataset train, test;
    if (cfg.contains("data")) {
      std::string dir = cfg.at("data").get<std::string>();
      train = bench::load_dataset(dir + "/train-images.idx", dir + "/train-scenes.jsonl");
      test = bench::load_dataset(dir + "/test-images.idx", dir + "/test-scenes.jsonl");
    } else {
      bench::DigitPool pool =
          bench::synth_digit_pool(mc.seed, get_or<std::size_t>(cfg, "digits_per_class", 200));
      train = bench::generate_dataset(mc, pool, "train", mc.train_size);
      test = bench::generate_dataset(mc, pool, "test", mc.test_size);
    }

    auto result = bench::train_mnist_action(mc, variant, train, test, {},
                                            get_or<std::string>(cfg, "checkpoint_out", ""));

    eval::MetricReport rep = base_report(cfg, mc.seed);
    rep.metrics["test_accuracy"] = result.test_accuracy;
    if (variant != bench::MnistVariant::Instance)
      rep.metrics["digit_accuracy"] = result.digit_accuracy;
    rep.series["epoch_train_loss"] = result.epoch_train_loss;
    for (const auto& spec : test.specs)
      rep.category_counts["label_" + std::to_string(spec.label)]++;
    *report_json = string_new(rep.to_json());
  });
}

static bench::SynthCorpusSpec corpus_spec_from_json(const json& cfg, std::uint64_t seed) {
  json c = cfg.contains("corpus") ? cfg.at("corpus") : json::object();
  check_keys(c, {"train_persons", "eval_persons", "num_activities", "feature_dim",
                 "instance_dim", "noise_sigma", "margin", "rule_pasta_min", "rule_pasta_max",
                 "extra_pasta_max"});
  bench::SynthCorpusSpec spec;
  spec.seed = seed;
  spec.train_persons = get_or<std::size_t>(c, "train_persons", spec.train_persons);
  spec.eval_persons = get_or<std::size_t>(c, "eval_persons", spec.eval_persons);
  spec.num_activities = get_or<std::size_t>(c, "num_activities", spec.num_activities);
  spec.feature_dim = get_or<std::size_t>(c, "feature_dim", spec.feature_dim);
  spec.instance_dim = get_or<std::size_t>(c, "instance_dim", spec.instance_dim);
  spec.noise_sigma = get_or<double>(c, "noise_sigma", spec.noise_sigma);
  spec.margin = get_or<double>(c, "margin", spec.margin);
  spec.rule_pasta_min = get_or<std::size_t>(c, "rule_pasta_min", spec.rule_pasta_min);
  spec.rule_pasta_max = get_or<std::size_t>(c, "rule_pasta_max", spec.rule_pasta_max);
  spec.extra_pasta_max = get_or<std::size_t>(c, "extra_pasta_max", spec.extra_pasta_max);
  return spec;
}

pastanet_status pastanet_featgen(const char* config_json, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    json cfg = parse_config(config_json);
    check_keys(cfg, {"seed", "corpus", "out", "stamp"});
    std::uint64_t seed = get_or<std::uint64_t>(cfg, "seed", 1);
    std::string out_dir = require_str(cfg, "out");
    fs::create_directories(out_dir);

    bench::SynthCorpus corpus = bench::synth_pasta_corpus(corpus_spec_from_json(cfg, seed));
    kb::save_corpus_jsonl(bench::to_image_records(corpus, false), out_dir + "/train.jsonl");
    kb::save_corpus_jsonl(bench::to_image_records(corpus, true), out_dir + "/eval.jsonl");
    bench::save_feature_file(corpus, false, out_dir + "/train-features.bin");
    bench::save_feature_file(corpus, true, out_dir + "/eval-features.bin");
    kb::save_tree_json(corpus.rule_tree, out_dir + "/rule-tree.json");

    eval::MetricReport rep = base_report(cfg, seed);
    rep.metrics["train_persons"] = static_cast<double>(corpus.train.size());
    rep.metrics["eval_persons"] = static_cast<double>(corpus.eval.size());
    rep.metrics["activities"] = static_cast<double>(corpus.activities.size());
    for (const auto& person : corpus.train)
      for (int a : person.activity_ids)
        rep.category_counts[corpus.activities.name(static_cast<std::size_t>(a))]++;
    *report_json = string_new(rep.to_json());
  });
}

static model::PipelineConfig pipeline_config_from_json(const json& cfg) {
  check_keys(cfg, {"seed", "corpus", "head", "fusion", "part_dim_m", "steps", "batch",
                   "optimizer", "lr", "momentum", "first_decay_steps", "embedding_kind",
                   "embedding_file", "attention_layers", "checkpoint_out", "checkpoint",
                   "report_out", "stamp"});
  model::PipelineConfig pc;
  pc.seed = get_or<std::uint64_t>(cfg, "seed", 1);
  pc.corpus = corpus_spec_from_json(cfg, pc.seed);
  pc.head = model::head_kind_from_string(get_or<std::string>(cfg, "head", "linear"));
  pc.fusion = model::fusion_mode_from_string(get_or<std::string>(cfg, "fusion", "late"));
  pc.part_dim_m = get_or<std::size_t>(cfg, "part_dim_m", pc.part_dim_m);
  pc.steps = get_or<std::size_t>(cfg, "steps", pc.steps);
  pc.batch = get_or<std::size_t>(cfg, "batch", pc.batch);
  pc.optimizer = get_or<std::string>(cfg, "optimizer", pc.optimizer);
  pc.lr = get_or<double>(cfg, "lr", pc.lr);
  pc.momentum = get_or<double>(cfg, "momentum", pc.momentum);
  pc.first_decay_steps = get_or<std::size_t>(cfg, "first_decay_steps", pc.first_decay_steps);
  pc.embedding_kind = get_or<std::string>(cfg, "embedding_kind", pc.embedding_kind);
  pc.embedding_file = get_or<std::string>(cfg, "embedding_file", pc.embedding_file);
  pc.attention_layers = get_or<std::size_t>(cfg, "attention_layers", pc.attention_layers);
  return pc;
}

static void fill_pipeline_report(eval::MetricReport& rep, const model::PipelineResult& result) {
  rep.metrics["pasta_mean_map"] = result.pasta_mean_map;
  rep.metrics["activity_map"] = result.activity_map;
  rep.series["per_part_map"] = result.per_part_map;
  std::vector<double> act_aps;
  for (const auto& ap : result.per_activity_ap) act_aps.push_back(ap ? *ap : -1.0);
  rep.series["per_activity_ap"] = act_aps;
  if (!result.loss_curve.empty()) rep.series["loss_curve"] = result.loss_curve;
}

pastanet_status pastanet_train_pasta(const char* config_json, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    json cfg = parse_config(config_json);
    model::PipelineConfig pc = pipeline_config_from_json(cfg);
    bench::SynthCorpus corpus = bench::synth_pasta_corpus(pc.corpus);
    model::PastaPipeline pipeline(pc);
    std::vector<double> losses = pipeline.train(corpus);
    model::PipelineResult result = pipeline.evaluate(corpus);
    result.loss_curve = std::move(losses);
    std::string checkpoint = get_or<std::string>(cfg, "checkpoint_out", "");
    if (!checkpoint.empty()) pipeline.save_checkpoint(checkpoint);

    eval::MetricReport rep = base_report(cfg, pc.seed);
    fill_pipeline_report(rep, result);
    *report_json = string_new(rep.to_json());
  });
}

pastanet_status pastanet_eval_pasta(const char* config_json, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    json cfg = parse_config(config_json);
    model::PipelineConfig pc = pipeline_config_from_json(cfg);
    if (!cfg.contains("checkpoint")) throw usage_error("missing config key 'checkpoint'");
    bench::SynthCorpus corpus = bench::synth_pasta_corpus(pc.corpus);
    model::PastaPipeline pipeline(pc);
    pipeline.load_checkpoint(cfg.at("checkpoint").get<std::string>());
    model::PipelineResult result = pipeline.evaluate(corpus);

    eval::MetricReport rep = base_report(cfg, pc.seed);
    fill_pipeline_report(rep, result);
    *report_json = string_new(rep.to_json());
  });
}

static json checks_to_json(const std::vector<CheckResult>& checks) {
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name},
                   {"pass", c.pass},
                   {"value", c.value},
                   {"threshold", c.threshold},
                   {"inverted", c.inverted}});
  return arr;
}

pastanet_status pastanet_gradcheck(char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    auto checks = run_gradient_checks();
    json rep;
    rep["checks"] = checks_to_json(checks);
    rep["all_pass"] = all_pass(checks);
    rep["table"] = format_check_table(checks);
    *report_json = string_new(rep.dump(2));
    if (!all_pass(checks)) throw numeric_error("gradient verification failed");
  });
}

pastanet_status pastanet_selftest(uint64_t seed, char** report_json) {
  return wrap([&] {
    if (!report_json) throw usage_error("null output pointer");
    auto checks = run_gradient_checks();
    auto oracle = run_oracle_checks(seed);
    checks.insert(checks.end(), oracle.begin(), oracle.end());
    json rep;
    rep["checks"] = checks_to_json(checks);
    rep["all_pass"] = all_pass(checks);
    rep["table"] = format_check_table(checks);
    *report_json = string_new(rep.dump(2));
    if (!all_pass(checks)) throw numeric_error("self test failed");
  });
}

}  // extern "C"
