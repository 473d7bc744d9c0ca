#include "pastanet/pasta_r.hpp"

#include <algorithm>

#include "pastanet/rng.hpp"

namespace pastanet::model {

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "linear") return HeadKind::Linear;
  if (s == "mlp") return HeadKind::Mlp;
  if (s == "gcn") return HeadKind::Gcn;
  if (s == "seq") return HeadKind::Seq;
  if (s == "tree") return HeadKind::Tree;
  throw usage_error("unknown pasta_r head '" + s + "' (expected linear|mlp|gcn|seq|tree)");
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "early") return FusionMode::Early;
  if (s == "late") return FusionMode::Late;
  if (s == "part_only") return FusionMode::PartOnly;
  if (s == "instance_only") return FusionMode::InstanceOnly;
  throw usage_error("unknown fusion mode '" + s + "' (expected early|late|part_only|instance_only)");
}

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::Linear: return "linear";
    case HeadKind::Mlp: return "mlp";
    case HeadKind::Gcn: return "gcn";
    case HeadKind::Seq: return "seq";
    case HeadKind::Tree: return "tree";
  }
  return "?";
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Early: return "early";
    case FusionMode::Late: return "late";
    case FusionMode::PartOnly: return "part_only";
    case FusionMode::InstanceOnly: return "instance_only";
  }
  return "?";
}

std::vector<double> fuse_late(const std::vector<double>& s_inst,
                              const std::vector<double>& s_part) {
  if (s_inst.size() != s_part.size())
    throw data_error("fuse_late: score vectors differ in length");
  std::vector<double> out(s_inst.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s_inst[i] + s_part[i];
  return out;
}

template <typename T>
PastaRHead<T> PastaRHead<T>::create(diff::ParamStore<T>& params, const PastaRConfig& cfg,
                                    std::uint64_t seed) {
  PastaRHead h;
  h.cfg_ = cfg;
  h.seed_ = seed;
  std::size_t extra = cfg.early_fusion ? cfg.instance_dim : 0;
  switch (cfg.head) {
    case HeadKind::Linear:
      h.flat_head_ = diff::Mlp<T>::create(params, "pasta_r/linear",
                                          kNumParts * cfg.part_dim + cfg.object_dim + extra, {},
                                          cfg.num_activities, seed);
      break;
    case HeadKind::Mlp:
      h.flat_head_ = diff::Mlp<T>::create(params, "pasta_r/mlp",
                                          kNumParts * cfg.part_dim + cfg.object_dim + extra,
                                          {cfg.mlp_hidden, cfg.mlp_hidden}, cfg.num_activities,
                                          seed);
      break;
    case HeadKind::Gcn: {
      std::size_t g = cfg.gcn_node_dim;
      h.gcn_proj_part_ = &params.create_glorot("pasta_r/gcn/proj_part", {cfg.part_dim, g}, seed,
                                               cfg.part_dim, g);
      h.gcn_proj_object_ = &params.create_glorot("pasta_r/gcn/proj_object", {cfg.object_dim, g},
                                                 seed, cfg.object_dim, g);
      if (cfg.early_fusion)
        h.gcn_proj_instance_ = &params.create_glorot("pasta_r/gcn/proj_instance",
                                                     {cfg.instance_dim, g}, seed,
                                                     cfg.instance_dim, g);
      h.gcn_w1_ = &params.create_glorot("pasta_r/gcn/w1", {g, g}, seed, g, g);
      h.gcn_w2_ = &params.create_glorot("pasta_r/gcn/w2", {g, g}, seed, g, g);
      h.gcn_mlp_ = diff::Mlp<T>::create(params, "pasta_r/gcn/out", g, {cfg.gcn_mlp_hidden},
                                        cfg.num_activities, seed);
      break;
    }
    case HeadKind::Seq: {
      std::size_t step = cfg.part_dim + cfg.object_dim + extra;
      h.lstm_ = diff::LstmParams<T>::create(params, "pasta_r/seq/lstm", step, cfg.lstm_hidden,
                                            seed);
      h.seq_out_w_ = &params.create_glorot("pasta_r/seq/out/w",
                                           {cfg.lstm_hidden, cfg.num_activities}, seed,
                                           cfg.lstm_hidden, cfg.num_activities);
      h.seq_out_b_ = &params.create("pasta_r/seq/out/b", {cfg.num_activities});
      break;
    }
    case HeadKind::Tree: {
      std::size_t m = cfg.part_dim, w = cfg.tree_merge;
      auto merge = [&](const std::string& name, std::size_t d_in) {
        return diff::Mlp<T>::create(params, "pasta_r/tree/" + name, d_in, {}, w, seed);
      };
      h.tree_arm_l_ = merge("arm_l", 2 * m);
      h.tree_arm_r_ = merge("arm_r", 2 * m);
      h.tree_leg_l_ = merge("leg_l", 2 * m);
      h.tree_leg_r_ = merge("leg_r", 2 * m);
      h.tree_upper_ = merge("upper", m + 2 * w);
      // Lower body: hip + both legs + both feet (feet feed the legs and the
      // second level, so they enter twice).
      h.tree_lower_ = merge("lower", m + 2 * w + 2 * m);
      h.tree_body_ = merge("body", 2 * w);
      h.tree_out_ = diff::Mlp<T>::create(params, "pasta_r/tree/out", w + cfg.object_dim + extra,
                                         {w}, cfg.num_activities, seed);
      break;
    }
  }
  return h;
}

template <typename T>
int PastaRHead<T>::build(diff::Tape<T>& tape, const Hag<T>& g) const {
  if (cfg_.early_fusion && g.instance_node < 0)
    throw data_error("early fusion requires an instance feature");
  switch (cfg_.head) {
    case HeadKind::Linear:
    case HeadKind::Mlp:
      return build_linear(tape, g);
    case HeadKind::Gcn:
      return build_gcn(tape, g);
    case HeadKind::Seq:
      return build_seq(tape, g);
    case HeadKind::Tree:
      return build_tree(tape, g);
  }
  throw data_error("unreachable head kind");
}

template <typename T>
int PastaRHead<T>::build_linear(diff::Tape<T>& tape, const Hag<T>& g) const {
  std::vector<int> pieces(g.parts.begin(), g.parts.end());
  pieces.push_back(g.object_node);
  if (cfg_.early_fusion) pieces.push_back(g.instance_node);
  return flat_head_.build(tape, tape.concat_cols(pieces));
}

template <typename T>
int PastaRHead<T>::build_mlp(diff::Tape<T>& tape, const Hag<T>& g) const {
  return build_linear(tape, g);
}

template <typename T>
int PastaRHead<T>::build_gcn(diff::Tape<T>& tape, const Hag<T>& g) const {
  std::size_t gdim = cfg_.gcn_node_dim;
  std::vector<int> nodes;
  for (int part : g.parts) nodes.push_back(tape.fc(part, tape.param(*gcn_proj_part_)));
  nodes.push_back(tape.fc(g.object_node, tape.param(*gcn_proj_object_)));
  HagStructure structure = g.structure;
  structure.has_instance = cfg_.early_fusion && g.instance_node >= 0;
  if (structure.has_instance)
    nodes.push_back(tape.fc(g.instance_node, tape.param(*gcn_proj_instance_)));
  std::size_t v = structure.node_count();
  diff::Tensor<T> a_hat = diff::normalize_adjacency(structure.template adjacency<T>());
  int x = tape.concat_cols(nodes);
  x = diff::gcn_layer(tape, x, a_hat, v, gdim, gdim, *gcn_w1_);
  x = diff::gcn_layer(tape, x, a_hat, v, gdim, gdim, *gcn_w2_);
  int readout = tape.block_mean(x, v, gdim);
  return gcn_mlp_.build(tape, readout);
}

template <typename T>
int PastaRHead<T>::build_seq(diff::Tape<T>& tape, const Hag<T>& g) const {
  std::array<int, kNumParts> order;
  for (int i = 0; i < kNumParts; ++i) order[i] = i;
  if (cfg_.seq_random_order) {
    Rng rng = Rng(seed_).stream("seq_order");
    for (int i = kNumParts - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  }
  std::size_t n = tape.val(g.parts[0]).shape[0];
  diff::Tensor<T> zeros({n, cfg_.lstm_hidden});
  int h = tape.input(zeros);
  int c = tape.input(zeros);
  for (int i = 0; i < kNumParts; ++i) {
    std::vector<int> step = {g.parts[static_cast<std::size_t>(order[i])], g.object_node};
    if (cfg_.early_fusion) step.push_back(g.instance_node);
    auto [h2, c2] = diff::lstm_cell(tape, tape.concat_cols(step), h, c, lstm_);
    h = h2;
    c = c2;
  }
  return tape.fc(h, tape.param(*seq_out_w_), tape.param(*seq_out_b_));
}

template <typename T>
int PastaRHead<T>::build_tree(diff::Tape<T>& tape, const Hag<T>& g) const {
  auto part = [&](PartIndex p) { return g.parts[static_cast<std::size_t>(p)]; };
  auto merge = [&](const diff::Mlp<T>& m, const std::vector<int>& sons) {
    return tape.relu(m.build(tape, tape.concat_cols(sons)));
  };
  int arm_r = merge(tree_arm_r_, {part(PartIndex::RightHand), part(PartIndex::RightUpperArm)});
  int arm_l = merge(tree_arm_l_, {part(PartIndex::LeftHand), part(PartIndex::LeftUpperArm)});
  int leg_r = merge(tree_leg_r_, {part(PartIndex::RightFoot), part(PartIndex::RightThigh)});
  int leg_l = merge(tree_leg_l_, {part(PartIndex::LeftFoot), part(PartIndex::LeftThigh)});
  int upper = merge(tree_upper_, {part(PartIndex::Head), arm_r, arm_l});
  int lower = merge(tree_lower_, {part(PartIndex::Hip), leg_r, leg_l, part(PartIndex::RightFoot),
                                  part(PartIndex::LeftFoot)});
  int body = merge(tree_body_, {upper, lower});
  std::vector<int> final_in = {body, g.object_node};
  if (cfg_.early_fusion) final_in.push_back(g.instance_node);
  return tree_out_.build(tape, tape.concat_cols(final_in));
}

template class PastaRHead<float>;
template class PastaRHead<double>;

}  // namespace pastanet::model
