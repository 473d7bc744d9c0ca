#include "pastanet/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "pastanet/activity2vec.hpp"
#include "pastanet/geometry.hpp"
#include "pastanet/gradcheck.hpp"
#include "pastanet/kb.hpp"
#include "pastanet/metrics.hpp"
#include "pastanet/nn.hpp"
#include "pastanet/optim.hpp"
#include "pastanet/pasta_model.hpp"
#include "pastanet/pasta_r.hpp"
#include "pastanet/rng.hpp"

namespace pastanet {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::TensorD;

namespace {

constexpr double kLayerTol = 1e-4;
constexpr double kControlBound = 1e-2;

TensorD random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.v) v = rng.normal() * scale;
  return t;
}

/// Loss reduction that keeps gradients informative everywhere: mean of the
/// output weighted by fixed pseudo-random coefficients.
int weighted_mean(Tape<double>& t, int y, std::uint64_t salt) {
  Rng rng(0xabcdef1234ull + salt);
  TensorD w(t.val(y).shape);
  for (auto& v : w.v) v = rng.uniform(-1.0, 1.0);
  return t.mean_all(t.mul(y, t.input(w)));
}

CheckResult check(const std::string& name, ParamStore<double>& ps,
                  const std::function<int(Tape<double>&)>& build, double tol = kLayerTol) {
  diff::GradCheckReport rep = diff::grad_check(ps, build);
  return {name, rep.max_rel_error <= tol, rep.max_rel_error, tol, false};
}

}  // namespace

std::vector<CheckResult> run_gradient_checks() {
  std::vector<CheckResult> out;
  Rng rng(20240901);

  {  // fc
    ParamStore<double> ps;
    auto& x = ps.create("x", {3, 5});
    auto& w = ps.create("w", {5, 4});
    auto& b = ps.create("b", {4});
    x.value = random_tensor(rng, {3, 5});
    w.value = random_tensor(rng, {5, 4});
    b.value = random_tensor(rng, {4});
    out.push_back(check("fc", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.fc(t.param(x), t.param(w), t.param(b)), 1);
    }));
  }
  {  // conv2d (padded, stride 1)
    ParamStore<double> ps;
    auto& x = ps.create("x", {2, 5, 6, 2});
    auto& w = ps.create("w", {3, 3, 2, 3});
    auto& b = ps.create("b", {3});
    x.value = random_tensor(rng, {2, 5, 6, 2});
    w.value = random_tensor(rng, {3, 3, 2, 3}, 0.5);
    b.value = random_tensor(rng, {3}, 0.1);
    out.push_back(check("conv2d", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.conv2d(t.param(x), t.param(w), t.param(b), {3, 3, 1, 1}), 2);
    }));
  }
  {  // maxpool (input spaced to keep the argmax stable under +-eps)
    ParamStore<double> ps;
    auto& x = ps.create("x", {2, 6, 6, 3});
    x.value = TensorD({2, 6, 6, 3});
    for (std::size_t i = 0; i < x.value.numel(); ++i)
      x.value[i] = static_cast<double>((i * 37) % 101) * 0.05;
    out.push_back(check("maxpool2d", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.maxpool2d(t.param(x), 2, 2), 3);
    }));
  }
  {  // roi_pool
    ParamStore<double> ps;
    auto& x = ps.create("x", {2, 8, 8, 2});
    x.value = TensorD({2, 8, 8, 2});
    for (std::size_t i = 0; i < x.value.numel(); ++i)
      x.value[i] = static_cast<double>((i * 53) % 97) * 0.04;
    std::vector<Box> boxes = {Box(1, 1, 7, 6), Box(0, 2, 5, 8)};
    out.push_back(check("roi_pool", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.roi_pool(t.param(x), boxes, 3, 1.0), 4);
    }));
  }
  {  // sigmoid
    ParamStore<double> ps;
    auto& x = ps.create("x", {4, 6});
    x.value = random_tensor(rng, {4, 6}, 2.0);
    out.push_back(check("sigmoid", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.sigmoid(t.param(x)), 5);
    }));
  }
  {  // bce with logits
    ParamStore<double> ps;
    auto& x = ps.create("scores", {4, 7});
    x.value = random_tensor(rng, {4, 7}, 1.5);
    TensorD targets({4, 7});
    Rng trng(7);
    for (auto& v : targets.v) v = trng.uniform() < 0.5 ? 0.0 : 1.0;
    out.push_back(check("bce_multilabel", ps, [&, targets](Tape<double>& t) {
      return t.bce_logits(t.param(x), targets);
    }));
  }
  {  // softmax cross-entropy
    ParamStore<double> ps;
    auto& x = ps.create("scores", {5, 6});
    x.value = random_tensor(rng, {5, 6});
    std::vector<int> labels = {0, 3, 5, 2, 1};
    out.push_back(check("softmax_ce", ps, [&, labels](Tape<double>& t) {
      return t.softmax_ce(t.param(x), labels);
    }));
  }
  {  // LSTM cell through 3 chained steps
    ParamStore<double> ps;
    diff::LstmParams<double> lstm = diff::LstmParams<double>::create(ps, "lstm", 4, 3, 11);
    auto& x0 = ps.create("x0", {2, 4});
    auto& x1 = ps.create("x1", {2, 4});
    auto& x2 = ps.create("x2", {2, 4});
    x0.value = random_tensor(rng, {2, 4});
    x1.value = random_tensor(rng, {2, 4});
    x2.value = random_tensor(rng, {2, 4});
    for (auto& v : lstm.wx->value.v) v = rng.normal() * 0.4;
    for (auto& v : lstm.wh->value.v) v = rng.normal() * 0.4;
    out.push_back(check("lstm_cell_x3", ps, [&](Tape<double>& t) {
      int h = t.input(TensorD({2, 3}));
      int c = t.input(TensorD({2, 3}));
      for (auto* xp : {&x0, &x1, &x2}) {
        auto [h2, c2] = diff::lstm_cell(t, t.param(*xp), h, c, lstm);
        h = h2;
        c = c2;
      }
      return weighted_mean(t, h, 6);
    }));
  }
  {  // gcn layer
    ParamStore<double> ps;
    auto& x = ps.create("x", {2, 4 * 3});
    auto& w = ps.create("w", {3, 5});
    x.value = random_tensor(rng, {2, 12});
    w.value = random_tensor(rng, {3, 5}, 0.6);
    TensorD adj({4, 4});
    adj[0 * 4 + 1] = adj[1 * 4 + 0] = 1;
    adj[1 * 4 + 2] = adj[2 * 4 + 1] = 1;
    adj[2 * 4 + 3] = adj[3 * 4 + 2] = 1;
    TensorD a_hat = diff::normalize_adjacency(adj);
    out.push_back(check("gcn_layer", ps, [&, a_hat](Tape<double>& t) {
      return weighted_mean(t, diff::gcn_layer(t, t.param(x), a_hat, 4, 3, 5, w), 7);
    }));
  }

  // Reduced-width pipeline checks: Activity2Vec plus each reasoning head,
  // driven end to end from part/object features through the recognizer.
  const auto& vocab = kb::PaStaVocabulary::embedded_default();
  for (model::HeadKind kind : {model::HeadKind::Linear, model::HeadKind::Mlp,
                               model::HeadKind::Gcn, model::HeadKind::Seq,
                               model::HeadKind::Tree}) {
    ParamStore<double> ps;
    model::PastaModelConfig rec_cfg;
    rec_cfg.feature_dim = 4;
    rec_cfg.attention_hidden = 3;
    rec_cfg.attention_layers = 1;
    rec_cfg.classifier_hidden = 3;
    auto rec = model::PastaRecognizer<double>::create(ps, vocab, rec_cfg, 3);

    model::A2VConfig a2v_cfg;
    a2v_cfg.part_dim = 5;
    a2v_cfg.visual_dim = 3;
    a2v_cfg.triplet_width = 6;
    auto a2v = model::Activity2Vec<double>::create(ps, a2v_cfg, 3);

    model::PastaRConfig head_cfg;
    head_cfg.head = kind;
    head_cfg.part_dim = 5;
    head_cfg.object_dim = 4;
    head_cfg.instance_dim = 4;
    head_cfg.num_activities = 3;
    head_cfg.mlp_hidden = 4;
    head_cfg.tree_merge = 3;
    head_cfg.gcn_node_dim = 3;
    head_cfg.gcn_mlp_hidden = 3;
    head_cfg.lstm_hidden = 3;
    auto head = model::PastaRHead<double>::create(ps, head_cfg, 3);

    const std::size_t n = 2;
    auto& f_o = ps.create("in/f_o", {n, 4});
    std::array<diff::Param<double>*, kNumParts> f_p{};
    std::array<TensorD, kNumParts> emb;
    std::array<TensorD, kNumParts> mask;
    for (int p = 0; p < kNumParts; ++p) {
      f_p[p] = &ps.create("in/f_p" + std::to_string(p), {n, 4});
      std::size_t nv = vocab.size(part_type_of(static_cast<PartIndex>(p)));
      emb[p] = random_tensor(rng, {n, nv * 6}, 0.5);
      mask[p] = TensorD({n, 1});
      mask[p].fill(1.0);
      if (p == 7) mask[p][1] = 0.0;  // one masked part exercises the mask path
    }
    // Randomize every parameter, biases included: zero biases can park ReLU
    // pre-activations exactly on the kink where central differences and the
    // subgradient legitimately disagree.
    for (std::size_t pi = 0; pi < ps.size(); ++pi)
      for (auto& v : ps.at(pi).value.v) v = rng.normal() * 0.4;
    out.push_back(check("a2v_head_" + model::to_string(kind), ps, [&](Tape<double>& t) {
      int f_o_node = t.param(f_o);
      std::array<int, kNumParts> reps{};
      for (int p = 0; p < kNumParts; ++p) {
        auto fwd = rec.forward_part(t, static_cast<PartIndex>(p), t.param(*f_p[p]), f_o_node,
                                    t.input(mask[p]));
        int lang = a2v.language_raw(t, fwd.probs, emb[p]);
        reps[p] = a2v.part_representation(t, fwd.visual_feature, lang,
                                          vocab.size(part_type_of(static_cast<PartIndex>(p))));
      }
      auto hag = model::build_hag(t, reps, f_o_node, std::nullopt);
      return weighted_mean(t, head.build(t, hag), 8 + static_cast<int>(kind));
    }));
  }
  {  // tree merge in isolation
    ParamStore<double> ps;
    auto merge = diff::Mlp<double>::create(ps, "merge", 6, {}, 3, 5);
    auto& a = ps.create("a", {2, 3});
    auto& b = ps.create("b", {2, 3});
    a.value = random_tensor(rng, {2, 3});
    b.value = random_tensor(rng, {2, 3});
    out.push_back(check("tree_merge", ps, [&](Tape<double>& t) {
      return weighted_mean(t, t.relu(merge.build(t, t.concat_cols({t.param(a), t.param(b)}))), 20);
    }));
  }

  {  // negative control: corrupted analytic gradients must be caught
    ParamStore<double> ps;
    auto& x = ps.create("x", {3, 4});
    auto& w = ps.create("w", {4, 2});
    x.value = random_tensor(rng, {3, 4});
    w.value = random_tensor(rng, {4, 2});
    auto build = [&](Tape<double>& t) { return weighted_mean(t, t.fc(t.param(x), t.param(w)), 30); };
    ps.zero_grads();
    Tape<double> tape;
    int loss = build(tape);
    tape.backward(loss);
    double max_rel = 0;
    const double eps = 1e-5;
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
      auto& p = ps.at(pi);
      for (std::size_t j = 0; j < p.value.numel(); ++j) {
        double corrupted = p.grad[j] * 1.1 + 0.05;  // deliberate corruption
        double saved = p.value[j];
        p.value[j] = saved + eps;
        Tape<double> tp;
        double fp = tp.val(build(tp))[0];
        p.value[j] = saved - eps;
        Tape<double> tm;
        double fm = tm.val(build(tm))[0];
        p.value[j] = saved;
        double numeric = (fp - fm) / (2 * eps);
        double rel = std::abs(corrupted - numeric) /
                     std::max({std::abs(corrupted), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
      }
    }
    out.push_back({"corrupted_gradient_control", max_rel > kControlBound, max_rel, kControlBound,
                   true});
  }
  return out;
}

namespace {

// ---- independent oracles (kept apart from the implementations they check)

double oracle_npmi(std::uint64_t n, std::uint64_t ca, std::uint64_t cp, std::uint64_t cj) {
  double pj = static_cast<double>(cj) / static_cast<double>(n);
  double pa = static_cast<double>(ca) / static_cast<double>(n);
  double pp = static_cast<double>(cp) / static_cast<double>(n);
  if (pj >= 1.0) return 1.0;
  return (std::log(pj) - std::log(pa) - std::log(pp)) / (-std::log(pj));
}

double oracle_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  // O(n^2): for each positive, count items ranked at or above it (stable
  // ties by index).
  std::size_t npos = 0;
  for (int l : labels) npos += static_cast<std::size_t>(l);
  double ap = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    std::size_t rank = 0, tp = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      bool above = scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
      if (above) {
        ++rank;
        if (labels[j]) ++tp;
      }
    }
    ap += static_cast<double>(tp) / static_cast<double>(rank) / static_cast<double>(npos);
  }
  return ap;
}

}  // namespace

std::vector<CheckResult> run_oracle_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  {  // NPMI vs direct log arithmetic on random count tables
    double max_err = 0;
    Rng r = rng.stream("npmi");
    for (int trial = 0; trial < 100; ++trial) {
      kb::CooccurrenceCounts counts;
      std::uint64_t n = 1 + r.uniform_int(1000);
      counts.total = n;
      counts.activities = {"a0", "a1", "a2"};
      counts.candidates = {{PartType::Hand, "hold"}, {PartType::Head, "eat"}};
      for (int a = 0; a < 3; ++a) counts.activity_count.push_back(1 + r.uniform_int(n));
      for (int p = 0; p < 2; ++p) counts.pasta_count.push_back(1 + r.uniform_int(n));
      counts.joint.assign(3, std::vector<std::uint64_t>(2, 0));
      for (int a = 0; a < 3; ++a)
        for (int p = 0; p < 2; ++p)
          counts.joint[a][p] =
              r.uniform_int(std::min(counts.activity_count[a], counts.pasta_count[p]) + 1);
      auto m = kb::compute_npmi(counts);
      for (int a = 0; a < 3; ++a)
        for (int p = 0; p < 2; ++p) {
          if (!m.defined[a][p]) continue;
          double expect = oracle_npmi(n, counts.activity_count[a], counts.pasta_count[p],
                                      counts.joint[a][p]);
          max_err = std::max(max_err, std::abs(m.npmi[a][p] - expect));
        }
    }
    out.push_back({"npmi_oracle", max_err <= 1e-12, max_err, 1e-12, false});
  }
  {  // AP vs the O(n^2) oracle
    double max_err = 0;
    Rng r = rng.stream("ap");
    for (int trial = 0; trial < 200; ++trial) {
      std::size_t n = 2 + r.uniform_int(40);
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = r.uniform_int(8) * 0.125;  // ties likely
        labels[i] = r.uniform() < 0.4 ? 1 : 0;
        any |= labels[i] == 1;
      }
      if (!any) labels[0] = 1;
      auto ap = eval::average_precision(scores, labels);
      max_err = std::max(max_err, std::abs(*ap - oracle_ap(scores, labels)));
    }
    out.push_back({"ap_oracle", max_err <= 1e-9, max_err, 1e-9, false});
  }
  {  // IoU closed-form fixtures
    double e1 = std::abs(geom::iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) - 1.0 / 7.0);
    double e2 = std::abs(geom::iou(Box(0, 0, 1, 1), Box(0, 0, 1, 1)) - 1.0);
    double e3 = std::abs(geom::iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)));
    double v = std::max({e1, e2, e3});
    out.push_back({"iou_fixtures", v <= 1e-12, v, 1e-12, false});
  }
  {  // MIL pooling vs elementwise max
    Rng r = rng.stream("mil");
    double max_err = 0;
    for (int trial = 0; trial < 50; ++trial) {
      std::size_t k = 1 + r.uniform_int(12), w = 1 + r.uniform_int(9);
      std::vector<std::vector<double>> scores(k, std::vector<double>(w));
      for (auto& row : scores)
        for (auto& v : row) v = r.uniform();
      auto pooled = kb::mil_pool(scores, w);
      for (std::size_t j = 0; j < w; ++j) {
        double expect = scores[0][j];
        for (std::size_t i = 1; i < k; ++i) expect = std::max(expect, scores[i][j]);
        max_err = std::max(max_err, std::abs(pooled.scores[j] - expect));
      }
    }
    out.push_back({"mil_max_oracle", max_err == 0, max_err, 0, false});
  }
  {  // few-shot split vs direct filter + nestedness
    Rng r = rng.stream("fewshot");
    bool ok = true;
    for (int trial = 0; trial < 50 && ok; ++trial) {
      std::map<std::string, std::uint64_t> counts;
      std::size_t n = 1 + r.uniform_int(20);
      for (std::size_t i = 0; i < n; ++i)
        counts["cat" + std::to_string(i)] = r.uniform_int(30);
      std::vector<std::uint64_t> thresholds = {1, 5, 10};
      auto sets = kb::few_shot_split(counts, thresholds);
      for (std::size_t s = 0; s < sets.size(); ++s) {
        for (const auto& [name, c] : counts) {
          bool in_set = std::find(sets[s].begin(), sets[s].end(), name) != sets[s].end();
          if (in_set != (c <= thresholds[s])) ok = false;
        }
        if (s > 0)
          for (const auto& name : sets[s - 1])
            if (std::find(sets[s].begin(), sets[s].end(), name) == sets[s].end()) ok = false;
      }
    }
    out.push_back({"few_shot_filter_oracle", ok, ok ? 0.0 : 1.0, 0, false});
  }
  {  // cosine decay restarts closed form
    double max_err = 0;
    Rng r = rng.stream("cosine");
    for (int trial = 0; trial < 1000; ++trial) {
      std::uint64_t fds = 1 + r.uniform_int(500);
      std::uint64_t step = r.uniform_int(20 * fds);
      double lr = diff::cosine_decay_restarts(0.1, step, fds);
      // closed form: locate cycle by subtracting doubled cycle lengths
      double rem = static_cast<double>(step), len = static_cast<double>(fds);
      while (rem >= len) {
        rem -= len;
        len *= 2.0;
      }
      double expect = 0.1 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * rem / len));
      max_err = std::max(max_err, std::abs(lr - expect));
    }
    out.push_back({"cosine_schedule_closed_form", max_err <= 1e-12, max_err, 1e-12, false});
  }
  return out;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

std::string format_check_table(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  for (const auto& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-34s %s  value=%.3e  bound%s%.3e\n", r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.value, r.inverted ? ">" : "<=", r.threshold);
    out << buf;
  }
  return out.str();
}

}  // namespace pastanet
