#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pastanet/activity2vec.hpp"
#include "pastanet/embeddings.hpp"
#include "pastanet/metrics.hpp"
#include "pastanet/pasta_model.hpp"
#include "pastanet/pasta_r.hpp"
#include "pastanet/synth_corpus.hpp"

namespace pastanet::model {

struct PipelineConfig {
  bench::SynthCorpusSpec corpus;

  HeadKind head = HeadKind::Linear;
  FusionMode fusion = FusionMode::Late;
  std::size_t part_dim_m = 1024;  // Activity2Vec output width per part
  PastaRConfig head_dims;         // hidden widths; activity/object dims filled in

  std::size_t steps = 1500;
  std::size_t batch = 32;
  std::string optimizer = "sgd";  // sgd | rmsprop
  double lr = 1e-5;
  double momentum = 0.9;
  std::size_t first_decay_steps = 5000;  // cosine decay restarts
  std::uint64_t seed = 1;

  std::string embedding_kind = "seeded";  // seeded | zero | file
  std::string embedding_file;
  std::size_t attention_layers = 2;
};

struct PipelineResult {
  double pasta_mean_map = 0;
  double activity_map = 0;
  std::vector<double> per_part_map;                     // 10 entries
  std::vector<std::optional<double>> per_activity_ap;
  std::vector<double> loss_curve;                       // one entry per step
  std::size_t steps_run = 0;
};

/// End-to-end part-state pipeline: PaSta recognition, Activity2Vec, a
/// reasoning head, the optional instance path, and the combined loss.
class PastaPipeline {
 public:
  explicit PastaPipeline(const PipelineConfig& cfg);
  ~PastaPipeline();
  PastaPipeline(PastaPipeline&&) noexcept;
  PastaPipeline& operator=(PastaPipeline&&) noexcept;

  /// Train on the corpus train split; returns per-step losses.
  std::vector<double> train(const bench::SynthCorpus& corpus,
                            const std::function<void(std::size_t, double)>& progress = {});

  /// PaSta and activity mAP on the eval split.
  PipelineResult evaluate(const bench::SynthCorpus& corpus);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  const PipelineConfig& config() const;
  diff::ParamStore<float>& params();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pastanet::model
