#pragma once

// Versioned binary checkpoint:
//   "ICVC" | u32 version | u32 scalar bytes
//   str model config JSON | str train config JSON
//   u32 vocab size | vocab words (u32 length + UTF-8)
//   u64 step | f64 alpha | u8 crossed | f64 l_cos | f64 l_gen | f64 l_combined
//   u32 param count | per param: str name, u32 rows, u32 cols, row-major data
//   u32 velocity count | per buffer: u32 rows, u32 cols, data
//   u64 FNV-1a of every preceding byte

#include "icvrag/binary_io.hpp"
#include "icvrag/training.hpp"

#include <string>
#include <vector>

namespace icvrag {

template <typename Scalar>
struct Checkpoint {
  ModelParams<Scalar> params;
  Vocab vocab;
  TrainConfig train;
  TrainState state;
  std::vector<Matrix<Scalar>> velocity;
};

inline constexpr char kCheckpointMagic[4] = {'I', 'C', 'V', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename Scalar>
void put_matrix(binio::Writer& w, const Matrix<Scalar>& m) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  w.array(m.data(), static_cast<std::size_t>(m.size()));
}

template <typename Scalar>
Matrix<Scalar> get_matrix(binio::Reader& r) {
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  if (static_cast<std::uint64_t>(rows) * cols * sizeof(Scalar) > r.remaining()) throw binio::FormatError("file truncated");
  Matrix<Scalar> m(rows, cols);
  r.array(m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

}  // namespace detail

template <typename Scalar>
std::vector<char> serialize_checkpoint(ModelParams<Scalar>& params, const Vocab& vocab, const TrainConfig& train,
                                       const TrainState& state, const std::vector<Matrix<Scalar>>& velocity) {
  binio::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(Scalar));
  w.str(to_json(params.cfg).dump());
  w.str(to_json(train).dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& word : vocab.words()) w.str(word);
  w.put<std::uint64_t>(state.step);
  w.put<double>(state.alpha);
  w.put<std::uint8_t>(state.crossed ? 1 : 0);
  w.put<double>(state.l_cos);
  w.put<double>(state.l_gen);
  w.put<double>(state.l_combined);
  std::uint32_t count = 0;
  params.for_each_param([&](Parameter<Scalar>&) { ++count; });
  w.put<std::uint32_t>(count);
  params.for_each_param([&](Parameter<Scalar>& p) {
    w.str(p.name);
    detail::put_matrix(w, p.value);
  });
  w.put<std::uint32_t>(static_cast<std::uint32_t>(velocity.size()));
  for (const auto& v : velocity) detail::put_matrix(w, v);
  const auto& bytes = w.data();
  w.put<std::uint64_t>(binio::fnv1a(bytes.data(), bytes.size()));
  return w.data();
}

/// Parses into a fresh object; any error leaves nothing half-loaded.
template <typename Scalar>
Checkpoint<Scalar> deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 + 8) throw binio::FormatError("file truncated");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  binio::Reader r(bytes.data(), body);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw binio::FormatError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw binio::FormatError("unsupported checkpoint version " + std::to_string(version));
  if (stored != binio::fnv1a(bytes.data(), body)) throw binio::FormatError("checkpoint checksum mismatch (corrupt or truncated)");
  const auto scalar_bytes = r.get<std::uint32_t>();
  if (scalar_bytes != sizeof(Scalar))
    throw binio::FormatError("checkpoint stores " + std::to_string(scalar_bytes) + "-byte scalars, expected " +
                             std::to_string(sizeof(Scalar)));
  const ModelConfig model_cfg = model_config_from_json(nlohmann::json::parse(r.str()));
  Checkpoint<Scalar> ck;
  ck.train = train_config_from_json(nlohmann::json::parse(r.str()));
  const auto vocab_n = r.get<std::uint32_t>();
  std::vector<std::string> words;
  words.reserve(vocab_n);
  for (std::uint32_t i = 0; i < vocab_n; ++i) words.push_back(r.str());
  ck.vocab = Vocab::from_words(words);
  ck.state.step = r.get<std::uint64_t>();
  ck.state.alpha = r.get<double>();
  ck.state.crossed = r.get<std::uint8_t>() != 0;
  ck.state.l_cos = r.get<double>();
  ck.state.l_gen = r.get<double>();
  ck.state.l_combined = r.get<double>();

  ck.params = ModelParams<Scalar>::init(model_cfg, static_cast<Index>(ck.vocab.size()), RngSeed{0});
  const auto count = r.get<std::uint32_t>();
  std::uint32_t seen = 0;
  ck.params.for_each_param([&](Parameter<Scalar>& p) {
    if (seen++ >= count) throw binio::FormatError("checkpoint has too few parameters");
    const std::string name = r.str();
    if (name != p.name) throw binio::FormatError("parameter order mismatch: found " + name + ", expected " + p.name);
    Matrix<Scalar> m = detail::get_matrix<Scalar>(r);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw binio::FormatError("parameter " + name + " has shape " + shape_str(m.rows(), m.cols()));
    p.value = std::move(m);
    p.zero_grad();
  });
  if (seen != count) throw binio::FormatError("checkpoint has extra parameters");
  const auto nvel = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nvel; ++i) ck.velocity.push_back(detail::get_matrix<Scalar>(r));
  if (r.remaining() != 0) throw binio::FormatError("trailing bytes in checkpoint");
  return ck;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, ModelParams<Scalar>& params, const Vocab& vocab, const TrainConfig& train,
                     const TrainState& state, const std::vector<Matrix<Scalar>>& velocity = {}) {
  binio::write_file_atomic(path, serialize_checkpoint(params, vocab, train, state, velocity));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  return deserialize_checkpoint<Scalar>(binio::read_file(path));
}

}  // namespace icvrag
