// icvrag: build-index / train / retrieve / generate / eval / synth.

#include "icvrag/checkpoint.hpp"
#include "icvrag/evaluation.hpp"
#include "icvrag/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace icvrag;
namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "RNG seed (overrides config)");
  cmd->add_option("--set", o.overrides, "override a config field, key=value (repeatable)");
}

RunConfig resolve_config(const CommonOptions& o) {
  nlohmann::json flat = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config " + o.config_path);
    try {
      flat = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("config " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : o.overrides) apply_override(flat, s);
  if (o.seed) flat["seed"] = *o.seed;
  return run_config_from_json(flat);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

int cmd_build_index(const RunConfig& cfg) {
  require_file(cfg.docs_path, "docs file");
  const auto docs = load_documents(cfg.docs_path);
  const ReferenceEncoder enc(reference_encoder_config(cfg.model), RngSeed{cfg.train.seed});
  const VectorStore store = build_index(docs, enc);
  store.save(cfg.index_path);
  std::cout << "index " << cfg.index_path << ": M=" << store.size() << " d_db=" << store.dim() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, bool resume, std::optional<std::uint64_t> max_steps) {
  require_file(cfg.qa_path, "qa file");
  require_file(cfg.docs_path, "docs file");
  require_file(cfg.index_path, "index file");
  const Corpus corpus = load_corpus(cfg.qa_path, cfg.docs_path);
  const VectorStore store = VectorStore::load(cfg.index_path);

  std::optional<Checkpoint<float>> ck;
  if (resume) {
    require_file(cfg.checkpoint_path, "checkpoint");
    ck = load_checkpoint<float>(cfg.checkpoint_path);
  }
  const Vocab vocab = ck ? ck->vocab : build_vocab(corpus);
  ModelParams<float> params = ck ? std::move(ck->params)
                                 : ModelParams<float>::init(cfg.model, static_cast<Index>(vocab.size()), RngSeed{cfg.train.seed});
  const TrainConfig tcfg = ck ? ck->train : cfg.train;
  const auto examples = prepare_examples(corpus.records, vocab, store, params.cfg.limits);
  if (examples.empty()) throw std::runtime_error("training set is empty");

  Trainer<float> trainer(params, store, tcfg);
  if (ck) trainer.restore(ck->state, std::move(ck->velocity));
  std::uint64_t total = trainer.total_steps(examples.size());
  if (max_steps) total = std::min(total, *max_steps);

  std::ofstream log(cfg.loss_log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write loss log " + cfg.loss_log_path);
  if (!resume) log << loss_log_header() << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(examples, total, [&](const LossReport& r) { log << loss_log_line(r) << '\n'; });
  log.flush();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(cfg.checkpoint_path, params, vocab, tcfg, trainer.state(), trainer.velocity());
  const auto& s = trainer.state();
  std::printf("steps=%llu alpha=%.6f l_cos=%.6f l_gen=%.6f l=%.6f (%.1fs)\n", static_cast<unsigned long long>(s.step),
              s.alpha, s.l_cos, s.l_gen, s.l_combined, secs);
  return 0;
}

struct Loaded {
  Checkpoint<float> ck;
  VectorStore store;
};

Loaded load_model(const RunConfig& cfg) {
  require_file(cfg.checkpoint_path, "checkpoint");
  require_file(cfg.index_path, "index file");
  return {load_checkpoint<float>(cfg.checkpoint_path), VectorStore::load(cfg.index_path)};
}

TokenIds question_tokens(const std::string& q, const Checkpoint<float>& ck) {
  TokenIds ids = encode_text(q, ck.vocab, ck.params.cfg.limits.question, "question");
  if (ids.empty()) throw std::runtime_error("question has no tokens");
  return ids;
}

int cmd_retrieve(const RunConfig& cfg, const std::string& question) {
  auto m = load_model(cfg);
  const auto res = retrieve(m.ck.params, m.store, question_tokens(question, m.ck), cfg.retrieve_n);
  for (std::size_t i = 0; i < res.hits.size(); ++i)
    std::printf("%zu\t%s\t%.6f\n", i + 1, res.hits[i].doc_id.c_str(), res.hits[i].score);
  return 0;
}

int cmd_generate(const RunConfig& cfg, const std::string& question) {
  auto m = load_model(cfg);
  const auto a = answer_question(m.ck.params, m.store, m.ck.vocab, question_tokens(question, m.ck),
                                 m.ck.params.cfg.limits.answer);
  std::cout << a.text << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  require_file(cfg.qa_path, "qa file");
  require_file(cfg.docs_path, "docs file");
  auto m = load_model(cfg);
  const Corpus corpus = load_corpus(cfg.qa_path, cfg.docs_path);
  if (corpus.records.empty()) throw std::runtime_error("empty evaluation set");
  const auto examples = prepare_examples(corpus.records, m.ck.vocab, m.store, m.ck.params.cfg.limits);
  const EvalReport rep = evaluate(m.ck.params, m.store, m.ck.vocab, examples, cfg.eval_ks);
  std::ofstream out(cfg.report_path);
  if (!out) throw std::runtime_error("cannot write report " + cfg.report_path);
  out << rep.to_json().dump(2) << '\n';
  std::cout << rep.to_table();
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::size_t pairs) {
  const Corpus c = gen_synthetic(pairs, RngSeed{cfg.train.seed});
  write_documents(cfg.docs_path, c.documents);
  write_records(cfg.qa_path, c.records);
  std::cout << "wrote " << c.documents.size() << " documents to " << cfg.docs_path << " and " << c.records.size()
            << " questions to " << cfg.qa_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented encoder-decoder with in-context vector fusion"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string question;
  bool resume = false;
  std::optional<std::uint64_t> max_steps;
  std::size_t pairs = 50;

  auto* build = app.add_subcommand("build-index", "encode docs.jsonl into a vector index");
  add_common(build, common);
  auto* train = app.add_subcommand("train", "train the model and write a checkpoint and loss log");
  add_common(train, common);
  train->add_flag("--resume", resume, "continue from checkpoint_path");
  train->add_option("--max-steps", max_steps, "stop after this many global steps");
  auto* retrieve_cmd = app.add_subcommand("retrieve", "print the top documents for a question");
  add_common(retrieve_cmd, common);
  retrieve_cmd->add_option("question", question, "question text")->required();
  auto* generate = app.add_subcommand("generate", "print the greedy answer for a question");
  add_common(generate, common);
  generate->add_option("question", question, "question text")->required();
  auto* eval = app.add_subcommand("eval", "score EM / top-k / MRR over qa_path and write report_path");
  add_common(eval, common);
  auto* synth = app.add_subcommand("synth", "write a synthetic key/value corpus to qa_path and docs_path");
  add_common(synth, common);
  synth->add_option("--pairs", pairs, "number of key/value pairs");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve_config(common);
    if (*build) return cmd_build_index(cfg);
    if (*train) return cmd_train(cfg, resume, max_steps);
    if (*retrieve_cmd) return cmd_retrieve(cfg, question);
    if (*generate) return cmd_generate(cfg, question);
    if (*eval) return cmd_eval(cfg);
    if (*synth) return cmd_synth(cfg, pairs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
