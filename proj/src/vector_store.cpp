#include "icvrag/vector_store.hpp"

#include "icvrag/binary_io.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace icvrag {

namespace {

constexpr double kUnitTolerance = 1e-6;

void check_unit_rows(const Matrix<float>& rows, const std::vector<std::string>& ids) {
  for (Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).cast<double>().norm();
    if (std::abs(n - 1.0) > kUnitTolerance)
      throw std::invalid_argument("stored vector for \"" + ids[static_cast<std::size_t>(i)] + "\" has norm " +
                                  std::to_string(n));
  }
}

}  // namespace

std::vector<std::size_t> RetrievalResult::indices() const {
  std::vector<std::size_t> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.index);
  return out;
}

std::size_t RetrievalResult::rank_of(const std::string& doc_id) const {
  for (std::size_t i = 0; i < hits.size(); ++i)
    if (hits[i].doc_id == doc_id) return i + 1;
  return 0;
}

VectorStore::VectorStore(Matrix<float> unit_rows, std::vector<std::string> doc_ids)
    : vectors_(std::move(unit_rows)), doc_ids_(std::move(doc_ids)) {
  if (doc_ids_.empty()) throw std::invalid_argument("vector store needs at least one document");
  if (static_cast<std::size_t>(vectors_.rows()) != doc_ids_.size())
    throw ShapeError("vector store has " + std::to_string(vectors_.rows()) + " rows for " +
                     std::to_string(doc_ids_.size()) + " ids");
  check_unit_rows(vectors_, doc_ids_);
}

VectorStore VectorStore::from_raw(const Matrix<float>& raw, std::vector<std::string> doc_ids) {
  if (static_cast<std::size_t>(raw.rows()) != doc_ids.size()) throw ShapeError("row/id count mismatch");
  Matrix<float> unit(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.rows(); ++i) {
    const Eigen::RowVectorXd r = raw.row(i).cast<double>();
    const double n = r.norm();
    if (n == 0.0 || !std::isfinite(n))
      throw std::domain_error("document \"" + doc_ids[static_cast<std::size_t>(i)] + "\" encodes to a zero-norm vector");
    unit.row(i) = (r / n).cast<float>();
  }
  return VectorStore(std::move(unit), std::move(doc_ids));
}

std::optional<std::size_t> VectorStore::index_of(const std::string& doc_id) const {
  auto it = std::find(doc_ids_.begin(), doc_ids_.end(), doc_id);
  if (it == doc_ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - doc_ids_.begin());
}

std::vector<char> VectorStore::serialize() const {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim()));
  w.array(vectors_.data(), static_cast<std::size_t>(vectors_.size()));
  for (const auto& id : doc_ids_) w.str(id);
  return w.data();
}

namespace {

std::pair<Matrix<float>, std::vector<std::string>> parse_index(const std::vector<char>& bytes) {
  binio::Reader r(bytes.data(), bytes.size());
  if (r.bytes(4) != std::string_view(VectorStore::kMagic, 4)) throw binio::FormatError("not an index file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != VectorStore::kVersion)
    throw binio::FormatError("unsupported index version " + std::to_string(version));
  const auto m = r.get<std::uint64_t>();
  const auto d = r.get<std::uint32_t>();
  if (m == 0 || d == 0) throw binio::FormatError("index declares an empty matrix");
  if (m * d * sizeof(float) > r.remaining()) throw binio::FormatError("file truncated");
  Matrix<float> v(static_cast<Index>(m), static_cast<Index>(d));
  r.array(v.data(), static_cast<std::size_t>(v.size()));
  std::vector<std::string> ids;
  ids.reserve(m);
  for (std::uint64_t i = 0; i < m; ++i) ids.push_back(r.str());
  if (r.remaining() != 0) throw binio::FormatError("trailing bytes after index payload");
  return {std::move(v), std::move(ids)};
}

}  // namespace

VectorStore VectorStore::deserialize(const std::vector<char>& bytes) {
  auto [v, ids] = parse_index(bytes);
  return VectorStore(std::move(v), std::move(ids));
}

void VectorStore::save(const std::string& path) const { binio::write_file_atomic(path, serialize()); }

VectorStore VectorStore::load(const std::string& path) { return deserialize(binio::read_file(path)); }

VectorStore VectorStore::import_vectors(const std::string& path) {
  auto [v, ids] = parse_index(binio::read_file(path));
  return from_raw(v, std::move(ids));
}

RetrievalResult top_n(const RowVectorXd& query, const VectorStore& store, std::size_t n) {
  if (n == 0) throw std::invalid_argument("top_n needs N >= 1");
  if (query.size() != store.dim())
    throw ShapeError("query width " + std::to_string(query.size()) + " != store width " + std::to_string(store.dim()));
  const double qn = query.norm();
  if (qn == 0.0 || !std::isfinite(qn)) throw std::domain_error("top_n query has zero norm");
  const auto& v = store.vectors();
  const std::size_t m = store.size();
  std::vector<double> scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (Index j = 0; j < v.cols(); ++j) dot += static_cast<double>(v(static_cast<Index>(i), j)) * query(j);
    scores[i] = std::clamp(dot / qn, -1.0, 1.0);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(n, m);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  RetrievalResult res;
  res.hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) res.hits.push_back({store.doc_ids()[order[i]], order[i], scores[order[i]]});
  return res;
}

ReferenceEncoder::ReferenceEncoder(const EncoderConfig& cfg, RngSeed seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  Rng rng = make_rng(seed, 0xd0c);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
  positions_ = uniform_matrix<float>(cfg_.max_len, cfg_.d_model, bound, rng);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string lp = "reference.layer" + std::to_string(l);
    EncoderLayer<float> layer;
    layer.attn = AttentionProj<float>::init(lp + ".attn", cfg_.d_model, bound, rng);
    layer.ffn = FeedForward<float>::init(lp + ".ffn", cfg_.d_model, cfg_.d_ff, cfg_.d_model, bound, rng);
    layers_.push_back(std::move(layer));
  }
}

Eigen::RowVectorXf ReferenceEncoder::word_embedding(const std::string& word) const {
  Rng rng = make_rng(RngSeed{seed_.value ^ fnv1a64(word)}, 0xe3b);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
  return uniform_matrix<float>(1, cfg_.d_model, bound, rng).row(0);
}

Eigen::RowVectorXf ReferenceEncoder::encode_words(const std::vector<std::string>& words) const {
  if (words.empty()) throw std::invalid_argument("reference encoder given no tokens");
  const Index t_len = std::min<Index>(static_cast<Index>(words.size()), cfg_.max_len);
  if (static_cast<Index>(words.size()) > t_len)
    std::cerr << "warning: document truncated from " << words.size() << " to " << t_len << " tokens\n";
  Matrix<float> h0(t_len, cfg_.d_model);
  for (Index i = 0; i < t_len; ++i) h0.row(i) = word_embedding(words[static_cast<std::size_t>(i)]) + positions_.row(i);
  Tape<float> tape;
  tape.set_grad_enabled(false);
  Var<float> h = encode_states(tape, layers_, tape.constant(std::move(h0)), cfg_);
  return pool_rows(h, cfg_.pooling).value().row(0);
}

Eigen::RowVectorXf ReferenceEncoder::encode_text(const std::string& text) const {
  return encode_words(normalize_words(text));
}

VectorStore build_index(const std::vector<Document>& documents, const ReferenceEncoder& encoder) {
  if (documents.empty()) throw std::invalid_argument("cannot build an index over zero documents");
  Matrix<float> raw(static_cast<Index>(documents.size()), encoder.config().d_model);
  std::vector<std::string> ids;
  ids.reserve(documents.size());
  for (std::size_t i = 0; i < documents.size(); ++i) {
    raw.row(static_cast<Index>(i)) = encoder.encode_text(documents[i].text);
    ids.push_back(documents[i].doc_id);
  }
  return VectorStore::from_raw(raw, std::move(ids));
}

}  // namespace icvrag
