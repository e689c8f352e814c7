#include "icvrag/evaluation.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace icvrag {

std::string normalize_answer(std::string_view text) {
  std::string out;
  std::string word;
  auto flush = [&] {
    if (word.empty() || word == "a" || word == "an" || word == "the") {
      word.clear();
      return;
    }
    if (!out.empty()) out.push_back(' ');
    out += word;
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c))
      flush();
    else if (c < 0x80 && std::ispunct(c))
      continue;
    else
      word.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  flush();
  return out;
}

double exact_match(const std::vector<std::string>& predictions, const std::vector<std::string>& golds) {
  if (predictions.size() != golds.size())
    throw std::invalid_argument("exact_match: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(golds.size()) + " golds");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    hits += normalize_answer(predictions[i]) == normalize_answer(golds[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

RetrievalMetrics retrieval_metrics(const std::vector<RetrievalResult>& results, const std::vector<std::string>& golds,
                                   const std::vector<std::size_t>& ks) {
  if (results.size() != golds.size())
    throw std::invalid_argument("retrieval_metrics: " + std::to_string(results.size()) + " results for " +
                                std::to_string(golds.size()) + " golds");
  RetrievalMetrics m;
  for (auto k : ks) m.top_k[k] = 0.0;
  if (results.empty()) return m;
  double rr = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::size_t rank = results[i].rank_of(golds[i]);
    m.ranks.push_back(rank);
    if (rank == 0) continue;
    rr += 1.0 / static_cast<double>(rank);
    for (auto k : ks)
      if (rank <= k) m.top_k[k] += 1.0;
  }
  const double n = static_cast<double>(results.size());
  for (auto& [k, v] : m.top_k) v /= n;
  m.mrr = rr / n;
  return m;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json tk = nlohmann::json::object();
  for (const auto& [k, v] : top_k) tk["top_" + std::to_string(k)] = v;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"id", r.id},
                    {"prediction", r.prediction},
                    {"gold_answer", r.gold_answer},
                    {"gold_doc_id", r.gold_doc_id},
                    {"rank", r.rank},
                    {"exact_match", r.exact}});
  return {{"n", n},
          {"em", em},
          {"retrieval", tk},
          {"mrr", mrr},
          {"mrr_convention", "reciprocal rank within the retrieved list; 0 when the gold document is absent"},
          {"averaging", "micro-average over records"},
          {"records", recs}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char line[96];
  std::snprintf(line, sizeof(line), "%-12s %10s\n", "metric", "value");
  os << line;
  std::snprintf(line, sizeof(line), "%-12s %10zu\n", "records", n);
  os << line;
  std::snprintf(line, sizeof(line), "%-12s %10.4f\n", "em", em);
  os << line;
  for (const auto& [k, v] : top_k) {
    const std::string name = "top_" + std::to_string(k);
    std::snprintf(line, sizeof(line), "%-12s %10.4f\n", name.c_str(), v);
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-12s %10.4f\n", "mrr", mrr);
  os << line;
  return os.str();
}

}  // namespace icvrag
