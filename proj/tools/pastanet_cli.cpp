// Command-line front end. Talks to the core exclusively through the C API in
// pastanet/capi.h; flags are folded over an optional JSON config file (flags
// win), and the merged configuration is passed down as JSON.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pastanet/capi.h"

using nlohmann::json;

namespace {

int fail(pastanet_status status) {
  std::cerr << "error: " << pastanet_last_error() << "\n";
  return static_cast<int>(status);
}

std::string data_root() {
  const char* env = std::getenv("PASTA_DATA_DIR");
  return env && *env ? env : ".";
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file " << path << "\n";
    std::exit(2);
  }
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed config file " << path << ": " << e.what() << "\n";
    std::exit(2);
  }
}

struct ReportSink {
  std::string path;  // empty = stdout

  int deliver(const char* report_json) const {
    if (!report_json) return 0;
    if (path.empty()) {
      std::cout << report_json << "\n";
    } else {
      std::ofstream out(path);
      if (!out) {
        std::cerr << "error: cannot write report " << path << "\n";
        return 3;
      }
      out << report_json << "\n";
      std::cerr << "report written to " << path << "\n";
    }
    return 0;
  }
};

using CommandFn = pastanet_status (*)(const char*, char**);

int run_json_command(CommandFn fn, const json& cfg, const ReportSink& sink) {
  char* report = nullptr;
  pastanet_status status = fn(cfg.dump().c_str(), &report);
  std::unique_ptr<char, void (*)(char*)> guard(report, pastanet_string_free);
  if (status != PASTANET_OK) {
    if (report) sink.deliver(report);
    return fail(status);
  }
  return sink.deliver(report);
}

// Set a config key only when the flag was actually given on the command line.
template <typename T>
void fold(json& cfg, const CLI::Option* opt, const char* key, const T& value) {
  if (opt && opt->count() > 0) cfg[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pastanet: part-state activity reasoning toolkit"};
  app.require_subcommand(1);

  // ---- kb ----------------------------------------------------------------
  auto* kb_cmd = app.add_subcommand("kb", "knowledge-base statistics");
  kb_cmd->require_subcommand(1);

  std::string kb_annotations, kb_vocab, kb_out, kb_in;
  double kb_threshold = 0.0;
  std::size_t kb_k = 76;

  auto* kb_build = kb_cmd->add_subcommand("build", "NPMI co-occurrence matrix from annotations");
  kb_build->add_option("--annotations", kb_annotations, "annotation corpus (JSON lines)")
      ->required();
  kb_build->add_option("--vocab", kb_vocab, "vocabulary JSON (default: embedded)");
  kb_build->add_option("--out", kb_out, "output kb JSON")->required();

  auto* kb_tree = kb_cmd->add_subcommand("tree", "activity parsing tree from a kb file");
  kb_tree->add_option("--kb", kb_in, "kb JSON from 'kb build'")->required();
  kb_tree->add_option("--threshold", kb_threshold, "NPMI edge threshold in [-1,1]")->required();
  kb_tree->add_option("--out", kb_out, "output tree JSON")->required();

  auto* kb_select = kb_cmd->add_subcommand("select", "top-k PaSta candidates by NPMI");
  kb_select->add_option("--kb", kb_in, "kb JSON from 'kb build'")->required();
  kb_select->add_option("-k,--count", kb_k, "number of candidates");

  // ---- partbox -----------------------------------------------------------
  std::string pb_keypoints, pb_out;
  double pb_threshold = 0.7, pb_width = 0, pb_height = 0;
  auto* partbox = app.add_subcommand("partbox", "part boxes from pose keypoints");
  partbox->add_option("--keypoints", pb_keypoints, "keypoint JSON lines")->required();
  partbox->add_option("--out", pb_out, "output JSON lines")->required();
  partbox->add_option("--threshold", pb_threshold, "joint visibility threshold");
  partbox->add_option("--width", pb_width, "image width")->required();
  partbox->add_option("--height", pb_height, "image height")->required();

  // ---- featgen -----------------------------------------------------------
  std::string fg_out = data_root() + "/synth-corpus", fg_config;
  std::uint64_t fg_seed = 1;
  auto* featgen = app.add_subcommand("featgen", "synthetic part-state corpus and features");
  featgen->add_option("--config", fg_config, "JSON config file");
  auto* fg_seed_opt = featgen->add_option("--seed", fg_seed, "master seed");
  auto* fg_out_opt = featgen->add_option("--out", fg_out, "output directory");

  // ---- train-pasta / eval ------------------------------------------------
  std::string tp_config, tp_head, tp_fusion, tp_ckpt, tp_report, tp_optimizer;
  std::uint64_t tp_seed = 1;
  std::size_t tp_steps = 0, tp_batch = 0;
  double tp_lr = 0;
  auto* train_pasta =
      app.add_subcommand("train-pasta", "train the part-state pipeline on the synthetic corpus");
  train_pasta->add_option("--config", tp_config, "JSON config file");
  auto* tp_seed_opt = train_pasta->add_option("--seed", tp_seed, "master seed");
  auto* tp_head_opt =
      train_pasta->add_option("--head", tp_head, "reasoning head: linear|mlp|gcn|seq|tree");
  auto* tp_fusion_opt = train_pasta->add_option(
      "--fusion", tp_fusion, "fusion mode: early|late|part_only|instance_only");
  auto* tp_steps_opt = train_pasta->add_option("--steps", tp_steps, "training steps");
  auto* tp_batch_opt = train_pasta->add_option("--batch", tp_batch, "batch size");
  auto* tp_lr_opt = train_pasta->add_option("--lr", tp_lr, "initial learning rate");
  auto* tp_opt_opt = train_pasta->add_option("--optimizer", tp_optimizer, "sgd|rmsprop");
  auto* tp_ckpt_opt =
      train_pasta->add_option("--checkpoint-out", tp_ckpt, "write trained parameters here");
  train_pasta->add_option("--report", tp_report, "write the JSON report here (default stdout)");

  std::string ev_config, ev_ckpt, ev_report;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved pipeline checkpoint");
  eval_cmd->add_option("--config", ev_config, "JSON config file (same keys as train-pasta)");
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--report", ev_report, "write the JSON report here (default stdout)");

  // ---- mnist-action ------------------------------------------------------
  auto* mnist = app.add_subcommand("mnist-action", "digit-sum analogy benchmark");
  mnist->require_subcommand(1);

  std::string mg_out = data_root() + "/mnist-action";
  std::uint64_t mg_seed = 1;
  std::size_t mg_train = 5000, mg_test = 800, mg_jobs = 1;
  auto* mnist_gen = mnist->add_subcommand("gen", "generate the scene dataset");
  mnist_gen->add_option("--seed", mg_seed, "master seed");
  mnist_gen->add_option("--train", mg_train, "training scenes");
  mnist_gen->add_option("--test", mg_test, "test scenes");
  mnist_gen->add_option("--out", mg_out, "output directory");
  mnist_gen->add_option("--jobs", mg_jobs, "generation worker threads");

  std::string mt_variant, mt_config, mt_data, mt_report, mt_ckpt;
  std::uint64_t mt_seed = 1;
  std::size_t mt_epochs = 0;
  bool mt_paper_epochs = false;
  auto add_mnist_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--variant", mt_variant, "instance|early|late|part")->required();
    cmd->add_option("--config", mt_config, "JSON config file");
    return std::tuple{cmd->add_option("--seed", mt_seed, "master seed"),
                      cmd->add_option("--epochs", mt_epochs, "training epochs (default 100)"),
                      cmd->add_option("--data", mt_data, "dataset directory from 'gen'"),
                      cmd->add_flag("--paper-epochs", mt_paper_epochs, "train 1000 epochs"),
                      cmd->add_option("--checkpoint-out", mt_ckpt, "write parameters here"),
                      cmd->add_option("--report", mt_report, "JSON report path")};
  };
  auto* mnist_train = mnist->add_subcommand("train", "train one variant");
  auto mt_opts = add_mnist_train_flags(mnist_train);
  // Spelled-out alias for the same command.
  auto* mnist_train_alias = app.add_subcommand("train-mnist-action", "alias of mnist-action train");
  auto mt_alias_opts = add_mnist_train_flags(mnist_train_alias);

  // ---- verification ------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit gradient verification battery");
  std::string gc_report;
  gradcheck->add_option("--report", gc_report, "JSON report path");

  auto* selftest = app.add_subcommand("selftest", "gradient checks plus oracle spot checks");
  std::uint64_t st_seed = 1;
  std::string st_report;
  selftest->add_option("--seed", st_seed, "oracle sampling seed");
  selftest->add_option("--report", st_report, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage / error text
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  // ---- dispatch ----------------------------------------------------------

  if (kb_build->parsed()) {
    pastanet_vocab* vocab = nullptr;
    pastanet_status s = kb_vocab.empty() ? pastanet_vocab_default(&vocab)
                                         : pastanet_vocab_load_json(kb_vocab.c_str(), &vocab);
    if (s != PASTANET_OK) return fail(s);
    pastanet_corpus* corpus = nullptr;
    s = pastanet_corpus_load_jsonl(kb_annotations.c_str(), vocab, &corpus);
    if (s != PASTANET_OK) {
      pastanet_vocab_free(vocab);
      return fail(s);
    }
    pastanet_kb* kb = nullptr;
    s = pastanet_kb_build(corpus, vocab, &kb);
    if (s == PASTANET_OK) s = pastanet_kb_save_json(kb, kb_out.c_str());
    std::cerr << "kb built over " << pastanet_corpus_num_persons(corpus) << " persons from "
              << pastanet_corpus_num_images(corpus) << " images\n";
    pastanet_kb_free(kb);
    pastanet_corpus_free(corpus);
    pastanet_vocab_free(vocab);
    return s == PASTANET_OK ? 0 : fail(s);
  }

  if (kb_tree->parsed() || kb_select->parsed()) {
    pastanet_kb* kb = nullptr;
    pastanet_status s = pastanet_kb_load_json(kb_in.c_str(), &kb);
    if (s != PASTANET_OK) return fail(s);
    if (kb_tree->parsed()) {
      s = pastanet_kb_save_tree_json(kb, kb_threshold, kb_out.c_str());
    } else {
      char* out = nullptr;
      s = pastanet_kb_select_candidates(kb, kb_k, &out);
      if (s == PASTANET_OK) std::cout << out << "\n";
      pastanet_string_free(out);
    }
    pastanet_kb_free(kb);
    return s == PASTANET_OK ? 0 : fail(s);
  }

  if (partbox->parsed()) {
    std::ifstream in(pb_keypoints);
    if (!in) {
      std::cerr << "error: cannot open " << pb_keypoints << "\n";
      return 3;
    }
    std::ofstream out(pb_out);
    if (!out) {
      std::cerr << "error: cannot write " << pb_out << "\n";
      return 3;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        std::cerr << "error: " << pb_keypoints << ":" << line_no << ": " << e.what() << "\n";
        return 3;
      }
      double joints[51];
      const auto& arr = j.at("joints");
      if (arr.size() != 17) {
        std::cerr << "error: line " << line_no << ": expected 17 joints\n";
        return 3;
      }
      for (int i = 0; i < 17; ++i)
        for (int c = 0; c < 3; ++c) joints[3 * i + c] = arr[i][c].get<double>();
      double boxes[40];
      int visible[10];
      pastanet_status s =
          pastanet_part_boxes(joints, pb_threshold, nullptr, pb_width, pb_height, boxes, visible);
      if (s != PASTANET_OK) return fail(s);
      json rec;
      rec["image_id"] = j.value("image_id", "");
      json part_boxes = json::array();
      for (int p = 0; p < 10; ++p) {
        if (visible[p])
          part_boxes.push_back(json::array(
              {{boxes[4 * p], boxes[4 * p + 1], boxes[4 * p + 2], boxes[4 * p + 3]}, true}));
        else
          part_boxes.push_back(nullptr);
      }
      rec["part_boxes"] = std::move(part_boxes);
      out << rec.dump() << "\n";
    }
    return 0;
  }

  if (featgen->parsed()) {
    json cfg = load_config_file(fg_config);
    fold(cfg, fg_seed_opt, "seed", fg_seed);
    fold(cfg, fg_out_opt, "out", fg_out);
    if (!cfg.contains("out")) cfg["out"] = fg_out;
    return run_json_command(&pastanet_featgen, cfg, ReportSink{});
  }

  if (train_pasta->parsed()) {
    json cfg = load_config_file(tp_config);
    fold(cfg, tp_seed_opt, "seed", tp_seed);
    fold(cfg, tp_head_opt, "head", tp_head);
    fold(cfg, tp_fusion_opt, "fusion", tp_fusion);
    fold(cfg, tp_steps_opt, "steps", tp_steps);
    fold(cfg, tp_batch_opt, "batch", tp_batch);
    fold(cfg, tp_lr_opt, "lr", tp_lr);
    fold(cfg, tp_opt_opt, "optimizer", tp_optimizer);
    fold(cfg, tp_ckpt_opt, "checkpoint_out", tp_ckpt);
    return run_json_command(&pastanet_train_pasta, cfg, ReportSink{tp_report});
  }

  if (eval_cmd->parsed()) {
    json cfg = load_config_file(ev_config);
    cfg["checkpoint"] = ev_ckpt;
    return run_json_command(&pastanet_eval_pasta, cfg, ReportSink{ev_report});
  }

  if (mnist_gen->parsed()) {
    json cfg;
    cfg["seed"] = mg_seed;
    cfg["train_size"] = mg_train;
    cfg["test_size"] = mg_test;
    cfg["out"] = mg_out;
    cfg["jobs"] = mg_jobs;
    return run_json_command(&pastanet_mnist_gen, cfg, ReportSink{});
  }

  if (mnist_train->parsed() || mnist_train_alias->parsed()) {
    const auto& opts = mnist_train->parsed() ? mt_opts : mt_alias_opts;
    json cfg = load_config_file(mt_config);
    cfg["variant"] = mt_variant;
    fold(cfg, std::get<0>(opts), "seed", mt_seed);
    fold(cfg, std::get<1>(opts), "epochs", mt_epochs);
    fold(cfg, std::get<2>(opts), "data", mt_data);
    if (mt_paper_epochs) cfg["epochs"] = 1000;
    fold(cfg, std::get<4>(opts), "checkpoint_out", mt_ckpt);
    return run_json_command(&pastanet_mnist_train, cfg, ReportSink{mt_report});
  }

  if (gradcheck->parsed()) {
    char* report = nullptr;
    pastanet_status s = pastanet_gradcheck(&report);
    if (report) {
      json j = json::parse(report);
      std::cout << j.value("table", "");
      if (!gc_report.empty()) ReportSink{gc_report}.deliver(report);
      pastanet_string_free(report);
    }
    return s == PASTANET_OK ? 0 : fail(s);
  }

  if (selftest->parsed()) {
    char* report = nullptr;
    pastanet_status s = pastanet_selftest(st_seed, &report);
    if (report) {
      json j = json::parse(report);
      std::cout << j.value("table", "");
      std::cout << (j.value("all_pass", false) ? "ALL PASS\n" : "FAILURES PRESENT\n");
      if (!st_report.empty()) ReportSink{st_report}.deliver(report);
      pastanet_string_free(report);
    }
    return s == PASTANET_OK ? 0 : fail(s);
  }

  return 0;
}
