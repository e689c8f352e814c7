#pragma once

// Precomputed document vectors with exact cosine top-N search.

#include "icvrag/corpus.hpp"
#include "icvrag/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace icvrag {

using RowVectorXd = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// a.b / (|a| |b|); zero-norm inputs are errors, never 0.
template <typename A, typename B>
double cosine_sim(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim dimension mismatch");
  const auto ad = a.template cast<double>().eval();
  const auto bd = b.template cast<double>().eval();
  const double na = ad.norm(), nb = bd.norm();
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_sim of a zero-norm vector");
  const double s = ad.reshaped().dot(bd.reshaped()) / (na * nb);
  return std::clamp(s, -1.0, 1.0);
}

struct ScoredDoc {
  std::string doc_id;
  std::size_t index = 0;
  double score = 0.0;
};

/// Ranked hits, scores non-increasing.
struct RetrievalResult {
  std::vector<ScoredDoc> hits;

  std::vector<std::size_t> indices() const;
  /// 1-based rank of doc_id, 0 when absent.
  std::size_t rank_of(const std::string& doc_id) const;
};

class VectorStore {
 public:
  static constexpr char kMagic[4] = {'I', 'C', 'V', 'X'};
  static constexpr std::uint32_t kVersion = 1;

  VectorStore() = default;
  /// Takes rows that are already unit-norm (checked to 1e-6).
  VectorStore(Matrix<float> unit_rows, std::vector<std::string> doc_ids);
  /// Normalizes raw rows; a zero row is an error naming its doc_id.
  static VectorStore from_raw(const Matrix<float>& raw, std::vector<std::string> doc_ids);

  std::size_t size() const { return doc_ids_.size(); }
  Index dim() const { return vectors_.cols(); }
  const Matrix<float>& vectors() const { return vectors_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  std::optional<std::size_t> index_of(const std::string& doc_id) const;

  template <typename Scalar>
  Matrix<Scalar> rows(const std::vector<std::size_t>& idx) const {
    Matrix<Scalar> out(static_cast<Index>(idx.size()), dim());
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.row(static_cast<Index>(i)) = vectors_.row(static_cast<Index>(idx[i])).template cast<Scalar>();
    return out;
  }

  std::vector<char> serialize() const;
  static VectorStore deserialize(const std::vector<char>& bytes);
  void save(const std::string& path) const;
  /// Strict load: rows must already be unit-norm.
  static VectorStore load(const std::string& path);
  /// Same file format, for externally computed vectors; rows are normalized on the way in.
  static VectorStore import_vectors(const std::string& path);

  bool operator==(const VectorStore& o) const { return doc_ids_ == o.doc_ids_ && vectors_ == o.vectors_; }

 private:
  Matrix<float> vectors_;
  std::vector<std::string> doc_ids_;
};

/// Highest-cosine N rows in non-increasing score order; ties go to the lower index.
RetrievalResult top_n(const RowVectorXd& query, const VectorStore& store, std::size_t n);

template <typename Scalar>
RetrievalResult top_n(const Matrix<Scalar>& query_row, const VectorStore& store, std::size_t n) {
  if (query_row.rows() != 1) throw ShapeError("top_n expects a single query row");
  return top_n(RowVectorXd(query_row.row(0).template cast<double>()), store, n);
}

/// Frozen document encoder standing in for an external embedding model.
/// Shares the query encoder's layer shape; token embeddings are derived from
/// a hash of the word and the seed, so no vocabulary is needed.
class ReferenceEncoder {
 public:
  ReferenceEncoder(const EncoderConfig& cfg, RngSeed seed);

  /// Raw pooled vector for a word sequence (truncated to max_len).
  Eigen::RowVectorXf encode_words(const std::vector<std::string>& words) const;
  Eigen::RowVectorXf encode_text(const std::string& text) const;

  const EncoderConfig& config() const { return cfg_; }
  RngSeed seed() const { return seed_; }

 private:
  Eigen::RowVectorXf word_embedding(const std::string& word) const;

  EncoderConfig cfg_;
  RngSeed seed_;
  Matrix<float> positions_;
  // mutable only because tapes take non-const parameters; inference tapes never write them
  mutable std::vector<EncoderLayer<float>> layers_;
};

/// Encodes, normalizes and stores every document in order.
VectorStore build_index(const std::vector<Document>& documents, const ReferenceEncoder& encoder);

}  // namespace icvrag
