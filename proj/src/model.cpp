#include "icvrag/model.hpp"

namespace icvrag {

std::vector<Example> prepare_examples(const std::vector<QARecord>& records, const Vocab& vocab,
                                      const VectorStore& store, const LengthLimits& limits) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    ex.question = encode_text(r.question, vocab, limits.question, "question " + r.id);
    ex.answer = encode_text(r.answer, vocab, limits.answer, "answer " + r.id);
    if (ex.question.empty() || ex.answer.empty()) throw CorpusError("record \"" + r.id + "\" tokenizes to nothing");
    const auto gold = store.index_of(r.gold_doc_id);
    if (!gold) throw CorpusError("record \"" + r.id + "\": gold document \"" + r.gold_doc_id + "\" is not in the index");
    ex.gold_index = *gold;
    ex.gold_doc_id = r.gold_doc_id;
    ex.answer_text = r.answer;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace icvrag
