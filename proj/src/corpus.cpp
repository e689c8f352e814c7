#include "icvrag/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace icvrag {

namespace {

constexpr const char* kReservedWords[Vocab::kReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw CorpusError("line " + std::to_string(line_no) + ": missing string field \"" + key + "\"");
  return it->get<std::string>();
}

nlohmann::json parse_object(std::string_view line, std::size_t line_no) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
  }
  if (!obj.is_object()) throw CorpusError("line " + std::to_string(line_no) + ": expected a JSON object");
  return obj;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocab::Vocab() {
  for (int i = 0; i < kReserved; ++i) {
    words_.emplace_back(kReservedWords[i]);
    index_.emplace(words_.back(), i);
  }
}

int Vocab::add(const std::string& word) {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocab::id(const std::string& word) const { return find(word).value_or(kUnk); }

std::optional<int> Vocab::find(const std::string& word) const {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  if (words.size() < kReserved) throw CorpusError("vocabulary lacks reserved entries");
  for (int i = 0; i < kReserved; ++i)
    if (words[static_cast<std::size_t>(i)] != kReservedWords[i]) throw CorpusError("reserved vocabulary ids reassigned");
  Vocab v;
  for (std::size_t i = kReserved; i < words.size(); ++i) {
    if (v.find(words[i])) throw CorpusError("duplicate vocabulary entry \"" + words[i] + "\"");
    v.add(words[i]);
  }
  return v;
}

TokenIds tokenize(std::string_view text, const Vocab& vocab) {
  TokenIds ids;
  for (const auto& w : normalize_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(const TokenIds& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < Vocab::kReserved && id != Vocab::kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

std::optional<std::size_t> Corpus::doc_index(const std::string& doc_id) const {
  for (std::size_t i = 0; i < documents.size(); ++i)
    if (documents[i].doc_id == doc_id) return i;
  return std::nullopt;
}

Document parse_document_line(std::string_view line, std::size_t line_no) {
  const auto obj = parse_object(line, line_no);
  Document d{require_string(obj, "doc_id", line_no), require_string(obj, "text", line_no)};
  if (d.doc_id.empty()) throw CorpusError("line " + std::to_string(line_no) + ": empty doc_id");
  if (normalize_words(d.text).empty())
    throw CorpusError("line " + std::to_string(line_no) + ": document \"" + d.doc_id + "\" has no tokens");
  return d;
}

QARecord parse_record_line(std::string_view line, std::size_t line_no) {
  const auto obj = parse_object(line, line_no);
  QARecord r{require_string(obj, "id", line_no), require_string(obj, "question", line_no),
             require_string(obj, "answer", line_no), require_string(obj, "gold_doc_id", line_no)};
  if (r.id.empty()) throw CorpusError("line " + std::to_string(line_no) + ": empty record id");
  if (normalize_words(r.question).empty())
    throw CorpusError("line " + std::to_string(line_no) + ": record \"" + r.id + "\" has an empty question");
  if (normalize_words(r.answer).empty())
    throw CorpusError("line " + std::to_string(line_no) + ": record \"" + r.id + "\" has an empty answer");
  return r;
}

std::vector<Document> load_documents(const std::filesystem::path& docs_path) {
  auto in = open_input(docs_path);
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (blank(line)) continue;
    Document d = parse_document_line(line, line_no);
    if (!seen.insert(d.doc_id).second)
      throw CorpusError("line " + std::to_string(line_no) + ": duplicate doc_id \"" + d.doc_id + "\"");
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<QARecord> load_records(const std::filesystem::path& qa_path, const std::vector<Document>& docs) {
  std::unordered_set<std::string> ids;
  for (const auto& d : docs) ids.insert(d.doc_id);
  auto in = open_input(qa_path);
  std::vector<QARecord> records;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (blank(line)) continue;
    QARecord r = parse_record_line(line, line_no);
    if (!ids.count(r.gold_doc_id))
      throw CorpusError("line " + std::to_string(line_no) + ": record \"" + r.id + "\" references unknown gold_doc_id \"" +
                        r.gold_doc_id + "\"");
    records.push_back(std::move(r));
  }
  return records;
}

Corpus load_corpus(const std::filesystem::path& qa_path, const std::filesystem::path& docs_path) {
  Corpus c;
  c.documents = load_documents(docs_path);
  c.records = load_records(qa_path, c.documents);
  return c;
}

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& d : docs) out << nlohmann::json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << '\n';
}

void write_records(const std::filesystem::path& path, const std::vector<QARecord>& records) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& r : records)
    out << nlohmann::json{{"id", r.id}, {"question", r.question}, {"answer", r.answer}, {"gold_doc_id", r.gold_doc_id}}
               .dump()
        << '\n';
}

Vocab build_vocab(const Corpus& corpus) {
  Vocab v;
  for (const auto& d : corpus.documents)
    for (const auto& w : normalize_words(d.text)) v.add(w);
  for (const auto& r : corpus.records)
    for (const auto& w : normalize_words(r.question)) v.add(w);
  for (const auto& r : corpus.records)
    for (const auto& w : normalize_words(r.answer)) v.add(w);
  return v;
}

TokenIds encode_text(std::string_view text, const Vocab& vocab, std::size_t limit, std::string_view what) {
  TokenIds ids = tokenize(text, vocab);
  if (ids.size() > limit) {
    std::cerr << "warning: " << what << " truncated from " << ids.size() << " to " << limit << " tokens\n";
    ids.resize(limit);
  }
  return ids;
}

namespace {

// consonant-vowel syllables; two-syllable words never collide with the
// fixed template words ("key", "value", "what", "is")
constexpr std::string_view kConsonants = "bdfghjklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::vector<std::string> symbol_pool() {
  std::vector<std::string> syll;
  for (char c : kConsonants)
    for (char v : kVowels) syll.push_back(std::string{c, v});
  std::vector<std::string> pool;
  pool.reserve(syll.size() * syll.size());
  for (const auto& a : syll)
    for (const auto& b : syll) pool.push_back(a + b);
  return pool;
}

}  // namespace

std::size_t synthetic_symbol_capacity() { return symbol_pool().size() / 2; }

Corpus gen_synthetic(std::size_t num_pairs, RngSeed seed) {
  if (num_pairs == 0) throw CorpusError("gen_synthetic needs at least one pair");
  auto pool = symbol_pool();
  if (num_pairs > pool.size() / 2)
    throw CorpusError("requested " + std::to_string(num_pairs) + " pairs but only " +
                      std::to_string(pool.size() / 2) + " distinct key/value symbols exist");
  Rng rng = make_rng(seed, 0x5e7);
  // partial Fisher-Yates with explicit arithmetic for portable determinism
  for (std::size_t i = 0; i < 2 * num_pairs; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  Corpus c;
  for (std::size_t i = 0; i < num_pairs; ++i) {
    const std::string& key = pool[2 * i];
    const std::string& value = pool[2 * i + 1];
    const std::string doc_id = "d" + std::to_string(i);
    c.documents.push_back({doc_id, "key " + key + " value " + value});
    c.records.push_back({"q" + std::to_string(i), "what is " + key, value, doc_id});
  }
  return c;
}

}  // namespace icvrag
