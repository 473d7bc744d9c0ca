#include "pastanet/embeddings.hpp"

#include <cmath>
#include <iostream>

#include "pastanet/rng.hpp"
#include "pastanet/tensorfile.hpp"

namespace pastanet::model {

EmbeddingProvider EmbeddingProvider::seeded(std::uint64_t seed) {
  return EmbeddingProvider(Kind::Seeded, seed);
}

EmbeddingProvider EmbeddingProvider::zero() { return EmbeddingProvider(Kind::Zero, 0); }

EmbeddingProvider EmbeddingProvider::from_file(const std::string& path,
                                               std::uint64_t fallback_seed) {
  EmbeddingProvider p(Kind::File, fallback_seed);
  for (auto& nt : diff::load_tensor_file(path)) {
    if (nt.name.rfind("emb/", 0) != 0) continue;
    if (nt.tensor.numel() != kTokenEmbeddingWidth)
      throw data_error("embedding '" + nt.name + "' must be 768 wide");
    p.table_.emplace(nt.name.substr(4),
                     std::vector<float>(nt.tensor.v.begin(), nt.tensor.v.end()));
  }
  return p;
}

std::vector<float> EmbeddingProvider::seeded_token(const std::string& tok) const {
  Rng rng = Rng(seed_).stream("emb", Rng::hash_name(tok));
  std::vector<float> v(kTokenEmbeddingWidth);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kTokenEmbeddingWidth));
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return v;
}

std::vector<float> EmbeddingProvider::token(const std::string& tok) const {
  switch (kind_) {
    case Kind::Zero:
      return std::vector<float>(kTokenEmbeddingWidth, 0.0f);
    case Kind::Seeded:
      return seeded_token(tok);
    case Kind::File: {
      auto it = table_.find(tok);
      if (it != table_.end()) return it->second;
      {
        std::lock_guard<std::mutex> lock(warn_state_->mutex);
        if (warn_state_->warned.insert(tok).second)
          std::cerr << "[pastanet] warning: embedding table has no token '" << tok
                    << "', using the seeded fallback\n";
      }
      return seeded_token(tok);
    }
  }
  return {};
}

std::vector<float> EmbeddingProvider::triplet(const std::string& part_token,
                                              const std::string& verb_token,
                                              const std::string& object_token) const {
  std::vector<float> out;
  out.reserve(kTripletEmbeddingWidth);
  for (const auto* tok : {&part_token, &verb_token, &object_token}) {
    std::vector<float> v = token(*tok);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace pastanet::model
