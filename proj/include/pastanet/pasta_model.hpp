#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pastanet/nn.hpp"
#include "pastanet/tape.hpp"
#include "pastanet/vocabulary.hpp"

namespace pastanet::model {

struct PastaModelConfig {
  std::size_t feature_dim = 1024;      // width of f_p and f_o
  std::size_t attention_hidden = 512;  // width of the relevance predictor's FC layers
  std::size_t attention_layers = 2;
  std::size_t classifier_hidden = 512;  // the two FC layers of the state classifier
};

// Width of f^V under the default configuration (the classifier's last hidden
// FC layer).
inline constexpr std::size_t kVisualFeatureWidth = 512;

/// Part-state recognition: a part relevance predictor and a multi-label
/// state classifier per part type (paired parts share parameters). The
/// classifier takes the elementwise max of the attention-reweighted part
/// feature and the object feature, then two 512-wide FC layers and per-verb
/// sigmoids.
template <typename T>
class PastaRecognizer {
 public:
  struct PartForward {
    int attention_logit = -1;  // [n,1]
    int attention = -1;        // [n,1], zero for masked parts
    int reweighted = -1;       // f* = f_p * a, [n,d]
    int logits = -1;           // [n, n_verbs(part type)]
    int probs = -1;            // sigmoid(logits)
    int visual_feature = -1;   // f^V, [n,512]
  };

  static PastaRecognizer create(diff::ParamStore<T>& params, const kb::PaStaVocabulary& vocab,
                                const PastaModelConfig& cfg, std::uint64_t seed) {
    PastaRecognizer r;
    r.cfg_ = cfg;
    for (int t = 0; t < kNumPartTypes; ++t) {
      auto& head = r.heads_[t];
      std::string prefix = "pasta/" + std::string(kPartTypeNames[t]);
      std::vector<std::size_t> att_hidden(cfg.attention_layers, cfg.attention_hidden);
      head.attention = diff::Mlp<T>::create(params, prefix + "/att", 2 * cfg.feature_dim,
                                            att_hidden, 1, seed);
      std::size_t n_verbs = vocab.size(static_cast<PartType>(t));
      head.classifier = diff::Mlp<T>::create(
          params, prefix + "/cls", cfg.feature_dim,
          {cfg.classifier_hidden, cfg.classifier_hidden}, n_verbs, seed);
      head.num_verbs = n_verbs;
    }
    return r;
  }

  std::size_t num_verbs(PartType t) const { return heads_[static_cast<int>(t)].num_verbs; }
  const PastaModelConfig& config() const { return cfg_; }

  /// Forward for one of the ten parts. mask is a constant [n,1] tensor of
  /// 0/1 part visibility; invisible parts get attention 0 and zero f*.
  PartForward forward_part(diff::Tape<T>& tape, PartIndex part, int f_p, int f_o,
                           int mask_node) const {
    const auto& head = heads_[static_cast<int>(part_type_of(part))];
    PartForward out;
    int att_in = tape.concat_cols({f_p, f_o});
    out.attention_logit = head.attention.build(tape, att_in);
    out.attention = tape.mul(tape.sigmoid(out.attention_logit), mask_node);
    out.reweighted = tape.block_scale(f_p, out.attention, 1, cfg_.feature_dim);
    int pooled = tape.pair_max(out.reweighted, f_o);
    out.logits = head.classifier.build_with_penultimate(tape, pooled, &out.visual_feature);
    out.probs = tape.sigmoid(out.logits);
    return out;
  }

  /// Combined recognition loss: per part, the state BCE plus the attention
  /// BCE, each mean-reduced over its unmasked elements, summed over the ten
  /// parts. Masked parts are excluded from both terms.
  int pasta_loss(diff::Tape<T>& tape, const std::array<PartForward, kNumParts>& parts,
                 const std::array<diff::Tensor<T>, kNumParts>& pasta_targets,
                 const std::array<diff::Tensor<T>, kNumParts>& attention_targets,
                 const std::array<diff::Tensor<T>, kNumParts>& row_masks) const {
    std::vector<int> terms;
    for (int p = 0; p < kNumParts; ++p) {
      std::size_t n = tape.val(parts[p].logits).shape[0];
      std::size_t w = tape.val(parts[p].logits).shape[1];
      diff::Tensor<T> elem_mask({n, w});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) elem_mask.at2(r, j) = row_masks[p][r];
      terms.push_back(tape.bce_logits(parts[p].logits, pasta_targets[p], &elem_mask));
      terms.push_back(
          tape.bce_logits(parts[p].attention_logit, attention_targets[p], &row_masks[p]));
    }
    return tape.add_scalars(terms);
  }

 private:
  struct TypeHead {
    diff::Mlp<T> attention;
    diff::Mlp<T> classifier;
    std::size_t num_verbs = 0;
  };

  PastaModelConfig cfg_;
  std::array<TypeHead, kNumPartTypes> heads_;
};

}  // namespace pastanet::model
