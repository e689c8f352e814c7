#pragma once

// Word-level tokenization, JSON-lines corpus loading and the synthetic
// key/value QA generator.

#include "icvrag/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace icvrag {

using TokenIds = std::vector<int>;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercases, strips ASCII punctuation, splits on whitespace.
std::vector<std::string> normalize_words(std::string_view text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab();

  /// Returns the id of word, inserting it if new.
  int add(const std::string& word);
  /// Id of word or kUnk.
  int id(const std::string& word) const;
  std::optional<int> find(const std::string& word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  static Vocab from_words(const std::vector<std::string>& words);

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

TokenIds tokenize(std::string_view text, const Vocab& vocab);
/// Joins word ids with single spaces, skipping reserved ids.
std::string detokenize(const TokenIds& ids, const Vocab& vocab);

struct LengthLimits {
  std::size_t question = 32;
  std::size_t answer = 16;
  std::size_t document = 64;
};

struct Document {
  std::string doc_id;
  std::string text;
};

struct QARecord {
  std::string id;
  std::string question;
  std::string answer;
  std::string gold_doc_id;
};

struct Corpus {
  std::vector<QARecord> records;
  std::vector<Document> documents;

  /// Index of doc_id in documents, or nullopt.
  std::optional<std::size_t> doc_index(const std::string& doc_id) const;
};

/// Parses docs.jsonl. Errors carry the 1-based line number.
std::vector<Document> load_documents(const std::filesystem::path& docs_path);
/// Parses qa.jsonl and resolves every gold_doc_id against docs.
std::vector<QARecord> load_records(const std::filesystem::path& qa_path, const std::vector<Document>& docs);
Corpus load_corpus(const std::filesystem::path& qa_path, const std::filesystem::path& docs_path);

/// Same validation as the file loaders, one line at a time.
Document parse_document_line(std::string_view line, std::size_t line_no);
QARecord parse_record_line(std::string_view line, std::size_t line_no);

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs);
void write_records(const std::filesystem::path& path, const std::vector<QARecord>& records);

/// Vocabulary over documents, then questions, then answers, in first-seen order.
Vocab build_vocab(const Corpus& corpus);

/// Tokenizes and truncates to limit, warning on stderr when truncation happens.
TokenIds encode_text(std::string_view text, const Vocab& vocab, std::size_t limit, std::string_view what);

/// Number of distinct symbols the synthetic generator can draw from.
std::size_t synthetic_symbol_capacity();

/// num_pairs documents "key K value V" with questions "what is K" -> "V".
Corpus gen_synthetic(std::size_t num_pairs, RngSeed seed);

}  // namespace icvrag
