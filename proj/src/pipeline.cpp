#include "pastanet/pipeline.hpp"

#include <unordered_map>

#include "pastanet/optim.hpp"
#include "pastanet/rng.hpp"
#include "pastanet/tensorfile.hpp"

namespace pastanet::model {

using diff::Tensor;
using diff::TensorF;

namespace {

EmbeddingProvider make_provider(const PipelineConfig& cfg) {
  if (cfg.embedding_kind == "seeded") return EmbeddingProvider::seeded(cfg.seed);
  if (cfg.embedding_kind == "zero") return EmbeddingProvider::zero();
  if (cfg.embedding_kind == "file") {
    if (cfg.embedding_file.empty()) throw usage_error("embedding_kind=file needs embedding_file");
    return EmbeddingProvider::from_file(cfg.embedding_file, cfg.seed);
  }
  throw usage_error("unknown embedding_kind '" + cfg.embedding_kind + "'");
}

}  // namespace

struct PastaPipeline::Impl {
  PipelineConfig cfg;
  const kb::PaStaVocabulary& vocab = kb::PaStaVocabulary::embedded_default();
  EmbeddingProvider provider;
  diff::ParamStore<float> params;
  PastaRecognizer<float> recognizer;
  Activity2Vec<float> a2v;
  PastaRHead<float> head;
  InstanceHead<float> instance_head;
  diff::OptimizerState<float> opt_state;
  bool use_instance_path = false;

  // Cache of per-(part type, object token) embedding rows [n_verbs * 2304].
  std::unordered_map<std::string, std::vector<float>> emb_rows;

  explicit Impl(const PipelineConfig& c) : cfg(c), provider(make_provider(c)) {
    PastaModelConfig rec_cfg;
    rec_cfg.feature_dim = cfg.corpus.feature_dim;
    rec_cfg.attention_layers = cfg.attention_layers;
    recognizer = PastaRecognizer<float>::create(params, vocab, rec_cfg, cfg.seed);

    A2VConfig a2v_cfg;
    a2v_cfg.part_dim = cfg.part_dim_m;
    a2v_cfg.visual_dim = rec_cfg.classifier_hidden;
    a2v = Activity2Vec<float>::create(params, a2v_cfg, cfg.seed);

    PastaRConfig head_cfg = cfg.head_dims;
    head_cfg.head = cfg.head;
    head_cfg.part_dim = cfg.part_dim_m;
    head_cfg.object_dim = cfg.corpus.feature_dim;
    head_cfg.instance_dim = cfg.corpus.instance_dim;
    head_cfg.num_activities = cfg.corpus.num_activities;
    head_cfg.early_fusion = cfg.fusion == FusionMode::Early;
    head = PastaRHead<float>::create(params, head_cfg, cfg.seed);

    use_instance_path =
        cfg.fusion == FusionMode::Late || cfg.fusion == FusionMode::InstanceOnly;
    if (use_instance_path) instance_head = InstanceHead<float>::create(params, head_cfg, cfg.seed);
  }

  const std::vector<float>& embedding_row(PartType type, const std::string& object_token) {
    std::string key = std::string(kPartTypeNames[static_cast<int>(type)]) + "|" + object_token;
    auto it = emb_rows.find(key);
    if (it != emb_rows.end()) return it->second;
    const auto& verbs = vocab.verbs(type);
    std::vector<float> row(verbs.size() * kTripletEmbeddingWidth);
    std::string part_token(kPartTypeNames[static_cast<int>(type)]);
    for (std::size_t k = 0; k < verbs.size(); ++k) {
      std::vector<float> emb = provider.triplet(part_token, verbs[k], object_token);
      std::copy(emb.begin(), emb.end(), row.begin() + k * kTripletEmbeddingWidth);
    }
    return emb_rows.emplace(key, std::move(row)).first->second;
  }

  struct Batch {
    std::array<TensorF, kNumParts> f_p;
    TensorF f_o, f_inst;
    std::array<TensorF, kNumParts> pasta_targets;   // [n, n_verbs]
    std::array<TensorF, kNumParts> att_targets;     // [n, 1]
    std::array<TensorF, kNumParts> masks;           // [n, 1]
    TensorF activity_targets;                       // [n, A]
    std::array<TensorF, kNumParts> emb;             // [n, n_verbs*2304]
  };

  Batch make_batch(const std::vector<bench::SynthPerson>& persons,
                   const std::vector<std::size_t>& ids) {
    std::size_t n = ids.size();
    std::size_t d = cfg.corpus.feature_dim;
    Batch b;
    b.f_o = TensorF({n, d});
    b.f_inst = TensorF({n, cfg.corpus.instance_dim});
    b.activity_targets = TensorF({n, cfg.corpus.num_activities});
    for (int p = 0; p < kNumParts; ++p) {
      PartType t = part_type_of(static_cast<PartIndex>(p));
      std::size_t nv = vocab.size(t);
      b.f_p[p] = TensorF({n, d});
      b.pasta_targets[p] = TensorF({n, nv});
      b.att_targets[p] = TensorF({n, 1});
      b.masks[p] = TensorF({n, 1});
      b.emb[p] = TensorF({n, nv * kTripletEmbeddingWidth});
    }
    for (std::size_t r = 0; r < n; ++r) {
      const bench::SynthPerson& person = persons[ids[r]];
      std::copy(person.object_feature.begin(), person.object_feature.end(),
                b.f_o.data() + r * d);
      std::copy(person.instance_feature.begin(), person.instance_feature.end(),
                b.f_inst.data() + r * cfg.corpus.instance_dim);
      for (int a : person.activity_ids) b.activity_targets.at2(r, static_cast<std::size_t>(a)) = 1;
      auto att = kb::derive_attention_labels(person.pasta);
      for (int p = 0; p < kNumParts; ++p) {
        PartType t = part_type_of(static_cast<PartIndex>(p));
        std::copy(person.part_features[p].begin(), person.part_features[p].end(),
                  b.f_p[p].data() + r * d);
        for (const auto& verb : person.pasta[p]) {
          int k = vocab.verb_index(t, verb);
          if (k >= 0) b.pasta_targets[p].at2(r, static_cast<std::size_t>(k)) = 1;
        }
        b.att_targets[p][r] = static_cast<float>(att[p]);
        b.masks[p][r] = 1.0f;  // synthetic parts are always visible
        const auto& row = embedding_row(t, person.object_token);
        std::copy(row.begin(), row.end(), b.emb[p].data() + r * row.size());
      }
    }
    return b;
  }

  struct Forward {
    int loss = -1;
    int part_scores = -1;      // sigmoid of the head logits
    int instance_scores = -1;  // sigmoid of the instance logits
    std::array<int, kNumParts> pasta_probs{};
  };

  Forward forward(diff::Tape<float>& tape, const Batch& b, bool with_loss) {
    Forward out;
    int f_o = tape.input(b.f_o);
    int f_inst = tape.input(b.f_inst);
    std::array<PastaRecognizer<float>::PartForward, kNumParts> parts;
    std::array<int, kNumParts> reps{};
    for (int p = 0; p < kNumParts; ++p) {
      int f_p = tape.input(b.f_p[p]);
      int mask = tape.input(b.masks[p]);
      parts[p] = recognizer.forward_part(tape, static_cast<PartIndex>(p), f_p, f_o, mask);
      out.pasta_probs[p] = parts[p].probs;
      PartType t = part_type_of(static_cast<PartIndex>(p));
      int lang = a2v.language_raw(tape, parts[p].probs, b.emb[p]);
      reps[p] = a2v.part_representation(tape, parts[p].visual_feature, lang, vocab.size(t));
    }

    bool early = cfg.fusion == FusionMode::Early;
    Hag<float> hag = build_hag(tape, reps, f_o, std::nullopt, early ? f_inst : -1);
    int part_logits = head.build(tape, hag);
    out.part_scores = tape.sigmoid(part_logits);

    int inst_logits = -1;
    if (use_instance_path) {
      inst_logits = instance_head.build(tape, f_inst, f_o);
      out.instance_scores = tape.sigmoid(inst_logits);
    }

    if (with_loss) {
      int l_pasta = recognizer.pasta_loss(tape, parts, b.pasta_targets, b.att_targets, b.masks);
      switch (cfg.fusion) {
        case FusionMode::Late:
          out.loss = total_loss(tape, l_pasta, part_logits, inst_logits, b.activity_targets);
          break;
        case FusionMode::Early:
        case FusionMode::PartOnly:
          out.loss = tape.add_scalars(
              {l_pasta, tape.bce_logits(part_logits, b.activity_targets)});
          break;
        case FusionMode::InstanceOnly:
          out.loss = tape.bce_logits(inst_logits, b.activity_targets);
          break;
      }
    }
    return out;
  }

  double step_lr(std::size_t step) const {
    return diff::cosine_decay_restarts(cfg.lr, step, cfg.first_decay_steps);
  }
};

PastaPipeline::PastaPipeline(const PipelineConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {}
PastaPipeline::~PastaPipeline() = default;
PastaPipeline::PastaPipeline(PastaPipeline&&) noexcept = default;
PastaPipeline& PastaPipeline::operator=(PastaPipeline&&) noexcept = default;

const PipelineConfig& PastaPipeline::config() const { return impl_->cfg; }
diff::ParamStore<float>& PastaPipeline::params() { return impl_->params; }

std::vector<double> PastaPipeline::train(
    const bench::SynthCorpus& corpus, const std::function<void(std::size_t, double)>& progress) {
  Impl& im = *impl_;
  if (corpus.train.empty()) throw data_error("train split is empty");
  Rng batch_rng = Rng(im.cfg.seed).stream("pipeline/batch");
  std::vector<double> losses;
  losses.reserve(im.cfg.steps);
  for (std::size_t step = 0; step < im.cfg.steps; ++step) {
    std::vector<std::size_t> ids(im.cfg.batch);
    for (auto& id : ids) id = batch_rng.uniform_int(corpus.train.size());
    Impl::Batch batch = im.make_batch(corpus.train, ids);
    diff::Tape<float> tape;
    Impl::Forward fwd = im.forward(tape, batch, true);
    double loss = tape.val(fwd.loss)[0];
    if (!std::isfinite(loss)) throw numeric_error("non-finite training loss at step " +
                                                  std::to_string(step));
    im.params.zero_grads();
    tape.backward(fwd.loss);
    if (im.cfg.optimizer == "sgd") {
      diff::sgd_momentum_step(im.params, im.opt_state, im.step_lr(step), im.cfg.momentum);
    } else if (im.cfg.optimizer == "rmsprop") {
      diff::rmsprop_step(im.params, im.opt_state, im.cfg.lr);
    } else {
      throw usage_error("unknown optimizer '" + im.cfg.optimizer + "'");
    }
    losses.push_back(loss);
    if (progress) progress(step, loss);
  }
  return losses;
}

PipelineResult PastaPipeline::evaluate(const bench::SynthCorpus& corpus) {
  Impl& im = *impl_;
  const auto& persons = corpus.eval;
  if (persons.empty()) throw data_error("eval split is empty");
  std::size_t A = im.cfg.corpus.num_activities;

  // Collected scores: per activity over persons, per (part, verb) over persons.
  std::vector<std::vector<double>> act_scores(A);
  std::vector<std::vector<int>> act_labels(A);
  std::array<std::vector<std::vector<double>>, kNumParts> pasta_scores;
  std::array<std::vector<std::vector<int>>, kNumParts> pasta_labels;
  for (int p = 0; p < kNumParts; ++p) {
    std::size_t nv = im.vocab.size(part_type_of(static_cast<PartIndex>(p)));
    pasta_scores[p].resize(nv);
    pasta_labels[p].resize(nv);
  }

  const std::size_t eval_batch = 64;
  for (std::size_t start = 0; start < persons.size(); start += eval_batch) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(start + eval_batch, persons.size()); ++i)
      ids.push_back(i);
    Impl::Batch batch = im.make_batch(persons, ids);
    diff::Tape<float> tape;
    Impl::Forward fwd = im.forward(tape, batch, false);

    const TensorF& part_s = tape.val(fwd.part_scores);
    const TensorF* inst_s = fwd.instance_scores >= 0 ? &tape.val(fwd.instance_scores) : nullptr;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t a = 0; a < A; ++a) {
        double s;
        switch (im.cfg.fusion) {
          case FusionMode::Late:
            s = static_cast<double>(part_s.at2(r, a)) + static_cast<double>(inst_s->at2(r, a));
            break;
          case FusionMode::InstanceOnly:
            s = static_cast<double>(inst_s->at2(r, a));
            break;
          default:
            s = static_cast<double>(part_s.at2(r, a));
        }
        act_scores[a].push_back(s);
        act_labels[a].push_back(batch.activity_targets.at2(r, a) > 0 ? 1 : 0);
      }
      for (int p = 0; p < kNumParts; ++p) {
        const TensorF& probs = tape.val(fwd.pasta_probs[p]);
        for (std::size_t k = 0; k < probs.shape[1]; ++k) {
          pasta_scores[p][k].push_back(probs.at2(r, k));
          pasta_labels[p][k].push_back(batch.pasta_targets[p].at2(r, k) > 0 ? 1 : 0);
        }
      }
    }
  }

  PipelineResult result;
  std::vector<std::vector<std::optional<double>>> per_part(kNumParts);
  for (int p = 0; p < kNumParts; ++p) {
    for (std::size_t k = 0; k < pasta_scores[p].size(); ++k)
      per_part[p].push_back(eval::average_precision(pasta_scores[p][k], pasta_labels[p][k]));
    bool any = false;
    for (const auto& ap : per_part[p])
      if (ap) any = true;
    result.per_part_map.push_back(any ? eval::mean_ap(per_part[p]) : 0.0);
  }
  result.pasta_mean_map = eval::pasta_map(per_part);
  for (std::size_t a = 0; a < A; ++a)
    result.per_activity_ap.push_back(eval::average_precision(act_scores[a], act_labels[a]));
  result.activity_map = eval::mean_ap(result.per_activity_ap);
  return result;
}

void PastaPipeline::save_checkpoint(const std::string& path) const {
  diff::save_tensor_file(diff::params_to_tensors(impl_->params), path);
}

void PastaPipeline::load_checkpoint(const std::string& path) {
  diff::tensors_to_params(diff::load_tensor_file(path), impl_->params);
}

}  // namespace pastanet::model
