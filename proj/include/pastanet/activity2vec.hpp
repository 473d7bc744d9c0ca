#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pastanet/embeddings.hpp"
#include "pastanet/nn.hpp"
#include "pastanet/pasta_model.hpp"
#include "pastanet/tape.hpp"
#include "pastanet/vocabulary.hpp"

namespace pastanet::model {

struct A2VConfig {
  std::size_t part_dim = 4096;                           // m
  std::size_t visual_dim = kVisualFeatureWidth;          // width of f^V
  std::size_t triplet_width = kTripletEmbeddingWidth;    // 2304 under the real provider
};

/// Assembles the per-part activity representation: the 512-wide visual
/// classifier feature concatenated with a probability-gated, mean-pooled,
/// linearly resized language embedding. The resize projection is shared
/// across parts.
template <typename T>
class Activity2Vec {
 public:
  static Activity2Vec create(diff::ParamStore<T>& params, const A2VConfig& cfg,
                             std::uint64_t seed) {
    if (cfg.part_dim <= cfg.visual_dim)
      throw usage_error("Activity2Vec part_dim must exceed the visual feature width");
    Activity2Vec a;
    a.cfg_ = cfg;
    std::size_t out = cfg.part_dim - cfg.visual_dim;
    a.resize_w_ = &params.create_glorot("a2v/resize/w", {cfg.triplet_width, out}, seed,
                                        cfg.triplet_width, out);
    a.resize_b_ = &params.create("a2v/resize/b", {out});
    return a;
  }

  const A2VConfig& config() const { return cfg_; }

  /// f^L_raw: the k-th triplet-wide block of the frozen embedding matrix
  /// scaled by the part's k-th state probability. embeddings is a constant
  /// [n, n_verbs*triplet_width] tensor (per-sample triplet rows).
  int language_raw(diff::Tape<T>& tape, int probs, const diff::Tensor<T>& embeddings) const {
    std::size_t n_verbs = tape.val(probs).shape[1];
    int emb = tape.input(embeddings);
    return tape.block_scale(emb, probs, n_verbs, cfg_.triplet_width);
  }

  /// f_PaSta = [ f^V | resize(mean-pool over state blocks of f^L_raw) ].
  int part_representation(diff::Tape<T>& tape, int visual_feature, int language_raw_node,
                          std::size_t n_verbs) const {
    int pooled = tape.block_mean(language_raw_node, n_verbs, cfg_.triplet_width);
    int resized = tape.fc(pooled, tape.param(*resize_w_), tape.param(*resize_b_));
    return tape.concat_cols({visual_feature, resized});
  }

  /// Builds the constant embedding matrix for one part: row r holds the
  /// concatenated triplet vectors (part token, each verb, the sample's
  /// object token), laid out as n_verbs blocks of 2304.
  static diff::Tensor<T> embedding_matrix(const EmbeddingProvider& provider,
                                          const kb::PaStaVocabulary& vocab, PartType type,
                                          const std::vector<std::string>& object_tokens) {
    const auto& verbs = vocab.verbs(type);
    std::size_t n = object_tokens.size();
    diff::Tensor<T> out({n, verbs.size() * kTripletEmbeddingWidth});
    std::string part_token(kPartTypeNames[static_cast<int>(type)]);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < verbs.size(); ++k) {
        std::vector<float> emb = provider.triplet(part_token, verbs[k], object_tokens[r]);
        T* dst = out.data() + r * out.shape[1] + k * kTripletEmbeddingWidth;
        for (std::size_t j = 0; j < kTripletEmbeddingWidth; ++j) dst[j] = static_cast<T>(emb[j]);
      }
    }
    return out;
  }

 private:
  A2VConfig cfg_;
  diff::Param<T>* resize_w_ = nullptr;
  diff::Param<T>* resize_b_ = nullptr;
};

}  // namespace pastanet::model
