#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "pastanet/tensor.hpp"

namespace pastanet::model {

inline constexpr std::size_t kTokenEmbeddingWidth = 768;
inline constexpr std::size_t kTripletEmbeddingWidth = 3 * kTokenEmbeddingWidth;  // 2304

/// Frozen token-embedding source: identical tokens always map to identical
/// vectors. Three kinds: a table loaded from a tensor container (entries
/// named "emb/<token>", width 768), a seeded deterministic pseudo-random
/// table, and an all-zero table. File tables fall back to the seeded
/// generator for missing tokens, with a warning logged once per token.
class EmbeddingProvider {
 public:
  enum class Kind { Seeded, File, Zero };

  static EmbeddingProvider seeded(std::uint64_t seed);
  static EmbeddingProvider zero();
  static EmbeddingProvider from_file(const std::string& path, std::uint64_t fallback_seed);

  Kind kind() const { return kind_; }

  /// 768-wide embedding of a single token.
  std::vector<float> token(const std::string& tok) const;

  /// 2304-wide concatenation of the (part, verb, object) token vectors.
  std::vector<float> triplet(const std::string& part_token, const std::string& verb_token,
                             const std::string& object_token) const;

 private:
  explicit EmbeddingProvider(Kind k, std::uint64_t seed)
      : kind_(k), seed_(seed), warn_state_(std::make_unique<WarnState>()) {}

  std::vector<float> seeded_token(const std::string& tok) const;

  struct WarnState {
    std::mutex mutex;
    std::set<std::string> warned;
  };

  Kind kind_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::vector<float>> table_;
  std::unique_ptr<WarnState> warn_state_;
};

}  // namespace pastanet::model
