#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pastanet/nn.hpp"
#include "pastanet/tape.hpp"
#include "pastanet/types.hpp"

namespace pastanet::model {

enum class HeadKind { Linear, Mlp, Gcn, Seq, Tree };
enum class FusionMode { Early, Late, PartOnly, InstanceOnly };

HeadKind head_kind_from_string(const std::string& s);
FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(HeadKind k);
std::string to_string(FusionMode m);

/// Hierarchical activity graph: ten part nodes, an object node (the context
/// feature occupies the object slot for body-only motions), and an optional
/// instance node. Part-part edges are fully connected and every part
/// connects to the object.
struct HagStructure {
  bool has_object = true;
  bool has_instance = false;
  bool body_motion = false;  // object slot holds the whole-image context

  std::size_t node_count() const {
    return kNumParts + (has_object ? 1 : 0) + (has_instance ? 1 : 0);
  }
  std::size_t part_part_edges() const { return kNumParts * (kNumParts - 1) / 2; }
  std::size_t part_object_edges() const { return has_object ? kNumParts : 0; }
  std::size_t edge_count() const { return part_part_edges() + part_object_edges(); }

  /// Raw adjacency over [parts..., object, instance?]; the instance node
  /// carries no explicit edges (it still self-loops under normalization).
  template <typename T>
  diff::Tensor<T> adjacency() const {
    std::size_t v = node_count();
    diff::Tensor<T> a({v, v});
    for (std::size_t i = 0; i < kNumParts; ++i)
      for (std::size_t j = 0; j < kNumParts; ++j)
        if (i != j) a[i * v + j] = T(1);
    if (has_object)
      for (std::size_t i = 0; i < kNumParts; ++i) {
        a[i * v + kNumParts] = T(1);
        a[kNumParts * v + i] = T(1);
      }
    return a;
  }
};

/// Tape-level graph instance: node ids for one batch.
template <typename T>
struct Hag {
  HagStructure structure;
  std::array<int, kNumParts> parts{};  // f_PaSta nodes, [n, m] each
  int object_node = -1;                // f_o (or f_c for body motions)
  int instance_node = -1;              // optional f_inst
};

/// Assemble the graph; errors when neither an object nor a context feature
/// is available.
template <typename T>
Hag<T> build_hag(diff::Tape<T>& tape, const std::array<int, kNumParts>& parts,
                 std::optional<int> object_feature, std::optional<int> context_feature,
                 int instance_feature = -1) {
  Hag<T> g;
  g.parts = parts;
  if (object_feature) {
    g.object_node = *object_feature;
  } else if (context_feature) {
    g.object_node = *context_feature;
    g.structure.body_motion = true;
  } else {
    throw data_error("build_hag: need an object feature or a context feature");
  }
  g.instance_node = instance_feature;
  g.structure.has_instance = instance_feature >= 0;
  (void)tape;
  return g;
}

struct PastaRConfig {
  std::size_t part_dim = 4096;     // m
  std::size_t object_dim = 1024;   // width of f_o / f_c
  std::size_t instance_dim = 1024; // width of f_inst
  std::size_t num_activities = 156;
  HeadKind head = HeadKind::Linear;
  bool early_fusion = false;       // instance feature folded into the head input
  // Paper-fixed widths: MLP head hiddens and tree merge width.
  std::size_t mlp_hidden = 1024;
  std::size_t tree_merge = 512;
  // Unpinned widths.
  std::size_t gcn_node_dim = 256;
  std::size_t gcn_mlp_hidden = 256;
  std::size_t lstm_hidden = 256;
  std::size_t instance_head_hidden = 512;
  bool seq_random_order = false;   // fixed head-to-foot order by default
};

/// The reasoning head family. All five kinds emit activity logits of
/// identical width, so any head can be swapped without touching the rest of
/// the pipeline.
template <typename T>
class PastaRHead {
 public:
  static PastaRHead create(diff::ParamStore<T>& params, const PastaRConfig& cfg,
                           std::uint64_t seed);

  /// Activity logits [n, num_activities] from the graph state.
  int build(diff::Tape<T>& tape, const Hag<T>& graph) const;

  const PastaRConfig& config() const { return cfg_; }

 private:
  int build_linear(diff::Tape<T>& tape, const Hag<T>& g) const;
  int build_mlp(diff::Tape<T>& tape, const Hag<T>& g) const;
  int build_gcn(diff::Tape<T>& tape, const Hag<T>& g) const;
  int build_seq(diff::Tape<T>& tape, const Hag<T>& g) const;
  int build_tree(diff::Tape<T>& tape, const Hag<T>& g) const;

  PastaRConfig cfg_;
  std::uint64_t seed_ = 0;

  // Linear / MLP.
  diff::Mlp<T> flat_head_;
  // GCN: per-node-type input projections, two graph convolutions, readout MLP.
  diff::Param<T>* gcn_proj_part_ = nullptr;
  diff::Param<T>* gcn_proj_object_ = nullptr;
  diff::Param<T>* gcn_proj_instance_ = nullptr;
  diff::Param<T>* gcn_w1_ = nullptr;
  diff::Param<T>* gcn_w2_ = nullptr;
  diff::Mlp<T> gcn_mlp_;
  // Sequential.
  diff::LstmParams<T> lstm_;
  diff::Param<T>* seq_out_w_ = nullptr;
  diff::Param<T>* seq_out_b_ = nullptr;
  // Tree.
  diff::Mlp<T> tree_arm_l_, tree_arm_r_, tree_leg_l_, tree_leg_r_;
  diff::Mlp<T> tree_upper_, tree_lower_, tree_body_;
  diff::Mlp<T> tree_out_;
};

/// Instance-level path stand-in: an MLP over the concatenated instance and
/// object features.
template <typename T>
class InstanceHead {
 public:
  static InstanceHead create(diff::ParamStore<T>& params, const PastaRConfig& cfg,
                             std::uint64_t seed) {
    InstanceHead h;
    h.mlp_ = diff::Mlp<T>::create(params, "inst_head",
                                  cfg.instance_dim + cfg.object_dim,
                                  {cfg.instance_head_hidden, cfg.instance_head_hidden},
                                  cfg.num_activities, seed);
    return h;
  }

  int build(diff::Tape<T>& tape, int f_inst, int f_o) const {
    return mlp_.build(tape, tape.concat_cols({f_inst, f_o}));
  }

 private:
  diff::Mlp<T> mlp_;
};

/// Late fusion of the two paths' probability vectors: S = S_inst + S_part.
/// The sum lives in [0,2] and is consumed only by rankings.
std::vector<double> fuse_late(const std::vector<double>& s_inst,
                              const std::vector<double>& s_part);

/// Total training loss: L_PaSta + BCE(part logits) + BCE(instance logits),
/// unweighted.
template <typename T>
int total_loss(diff::Tape<T>& tape, int l_pasta, int part_logits, int instance_logits,
               const diff::Tensor<T>& activity_targets) {
  std::vector<int> terms = {l_pasta, tape.bce_logits(part_logits, activity_targets),
                            tape.bce_logits(instance_logits, activity_targets)};
  return tape.add_scalars(terms);
}

}  // namespace pastanet::model
