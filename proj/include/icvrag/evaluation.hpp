#pragma once

#include "icvrag/model.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace icvrag {

/// SQuAD-style: lowercase, drop punctuation and articles, collapse whitespace.
std::string normalize_answer(std::string_view text);

double exact_match(const std::vector<std::string>& predictions, const std::vector<std::string>& golds);

struct RetrievalMetrics {
  std::map<std::size_t, double> top_k;
  double mrr = 0.0;
  std::vector<std::size_t> ranks;  // 1-based, 0 = not retrieved
};

/// top_k: share of records with the gold id within rank k. MRR uses 1/rank
/// inside the retrieved list and 0 when the gold id is absent.
RetrievalMetrics retrieval_metrics(const std::vector<RetrievalResult>& results, const std::vector<std::string>& golds,
                                   const std::vector<std::size_t>& ks = {1, 3, 5});

struct RecordResult {
  std::string id;
  std::string prediction;
  std::string gold_answer;
  std::string gold_doc_id;
  std::size_t rank = 0;
  bool exact = false;
};

struct EvalReport {
  std::size_t n = 0;
  double em = 0.0;
  std::map<std::size_t, double> top_k;
  double mrr = 0.0;
  std::vector<RecordResult> records;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

template <typename Scalar>
EvalReport evaluate(ModelParams<Scalar>& p, const VectorStore& store, const Vocab& vocab,
                    const std::vector<Example>& examples, const std::vector<std::size_t>& ks) {
  if (examples.empty()) throw std::invalid_argument("empty evaluation set");
  const std::size_t depth = *std::max_element(ks.begin(), ks.end());
  std::vector<RetrievalResult> retrieved;
  std::vector<std::string> preds, golds, gold_ids;
  EvalReport rep;
  for (const auto& ex : examples) {
    retrieved.push_back(retrieve(p, store, ex.question, depth));
    const Answer a = answer_question(p, store, vocab, ex.question, p.cfg.limits.answer);
    preds.push_back(a.text);
    golds.push_back(ex.answer_text);
    gold_ids.push_back(ex.gold_doc_id);
    rep.records.push_back({ex.id, a.text, ex.answer_text, ex.gold_doc_id, retrieved.back().rank_of(ex.gold_doc_id),
                           normalize_answer(a.text) == normalize_answer(ex.answer_text)});
  }
  const auto rm = retrieval_metrics(retrieved, gold_ids, ks);
  rep.n = examples.size();
  rep.em = exact_match(preds, golds);
  rep.top_k = rm.top_k;
  rep.mrr = rm.mrr;
  return rep;
}

}  // namespace icvrag
