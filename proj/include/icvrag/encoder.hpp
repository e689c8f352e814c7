#pragma once

// Query encoder: token embedding + learned positions, N residual
// self-attention / feed-forward layers, pooled to one context vector.

#include "icvrag/rng.hpp"
#include "icvrag/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace icvrag {

enum class Pooling { kMean, kMax };
enum class Activation { kRelu, kIdentity };

enum class VectorRole { kQuery, kDb, kIcv, kAttended, kDoc };

inline const char* role_name(VectorRole r) {
  switch (r) {
    case VectorRole::kQuery: return "query";
    case VectorRole::kDb: return "db";
    case VectorRole::kIcv: return "icv";
    case VectorRole::kAttended: return "attended";
    case VectorRole::kDoc: return "doc";
  }
  return "?";
}

class RoleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A 1 x d vector on a tape tagged with the part it plays in the pipeline.
template <typename Scalar>
struct ContextVector {
  Var<Scalar> vec;
  VectorRole role;

  Index dim() const { return vec.cols(); }
  void expect(VectorRole want, const char* where) const {
    if (role != want)
      throw RoleError(std::string(where) + " expects a " + role_name(want) + " vector, got " + role_name(role));
  }
};

template <typename Scalar>
Parameter<Scalar> init_param(std::string name, Index rows, Index cols, double bound, Rng& rng) {
  return Parameter<Scalar>(std::move(name), uniform_matrix<Scalar>(rows, cols, bound, rng));
}

template <typename Scalar>
Parameter<Scalar> zero_param(std::string name, Index rows, Index cols) {
  return Parameter<Scalar>(std::move(name), Matrix<Scalar>::Zero(rows, cols));
}

/// Two-layer position-wise feed-forward block: act(x W1 + b1) W2 + b2.
template <typename Scalar>
struct FeedForward {
  Parameter<Scalar> w1, b1, w2, b2;
  Activation act = Activation::kRelu;

  static FeedForward init(const std::string& prefix, Index d_in, Index d_hidden, Index d_out, double bound, Rng& rng) {
    FeedForward f;
    f.w1 = init_param<Scalar>(prefix + ".w1", d_in, d_hidden, bound, rng);
    f.b1 = zero_param<Scalar>(prefix + ".b1", 1, d_hidden);
    f.w2 = init_param<Scalar>(prefix + ".w2", d_hidden, d_out, bound, rng);
    f.b2 = zero_param<Scalar>(prefix + ".b2", 1, d_out);
    return f;
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(w1), f(b1), f(w2), f(b2);
  }

  Var<Scalar> forward(Tape<Scalar>& t, const Var<Scalar>& x) {
    Var<Scalar> h = add_row(matmul(x, t.parameter(w1)), t.parameter(b1));
    if (act == Activation::kRelu) h = relu(h);
    return add_row(matmul(h, t.parameter(w2)), t.parameter(b2));
  }
};

/// Query/key/value projections for one attention sublayer.
template <typename Scalar>
struct AttentionProj {
  Parameter<Scalar> wq, wk, wv;

  static AttentionProj init(const std::string& prefix, Index d_model, double bound, Rng& rng) {
    AttentionProj a;
    a.wq = init_param<Scalar>(prefix + ".wq", d_model, d_model, bound, rng);
    a.wk = init_param<Scalar>(prefix + ".wk", d_model, d_model, bound, rng);
    a.wv = init_param<Scalar>(prefix + ".wv", d_model, d_model, bound, rng);
    return a;
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(wq), f(wk), f(wv);
  }
};

struct EncoderConfig {
  Index d_model = 64;
  Index d_ff = 128;
  int layers = 2;
  int heads = 1;
  Index max_len = 64;
  Pooling pooling = Pooling::kMean;
  bool pre_norm = false;

  void validate() const {
    if (d_model < 1 || d_ff < 1 || max_len < 1 || heads < 1) throw std::invalid_argument("encoder dimensions must be >= 1");
    if (layers < 0) throw std::invalid_argument("encoder layer count must be >= 0");
    if (d_model % heads != 0) throw std::invalid_argument("d_model must be divisible by the head count");
  }
};

template <typename Scalar>
struct EncoderLayer {
  AttentionProj<Scalar> attn;
  FeedForward<Scalar> ffn;

  template <typename F>
  void for_each_param(F&& f) {
    attn.for_each_param(f);
    ffn.for_each_param(f);
  }
};

template <typename Scalar>
Var<Scalar> maybe_norm(const Var<Scalar>& h, bool on) {
  return on ? layer_norm_rows(h) : h;
}

/// H <- H + SelfAttn(H); H <- H + FFN(H), optionally pre-normalized.
template <typename Scalar>
Var<Scalar> encoder_layer_forward(Tape<Scalar>& t, EncoderLayer<Scalar>& layer, const Var<Scalar>& h,
                                  const EncoderConfig& cfg) {
  Var<Scalar> x = maybe_norm(h, cfg.pre_norm);
  Var<Scalar> q = matmul(x, t.parameter(layer.attn.wq));
  Var<Scalar> k = matmul(x, t.parameter(layer.attn.wk));
  Var<Scalar> v = matmul(x, t.parameter(layer.attn.wv));
  Var<Scalar> h1 = add(h, multi_head_attention(q, k, v, cfg.heads));
  return add(h1, layer.ffn.forward(t, maybe_norm(h1, cfg.pre_norm)));
}

template <typename Scalar>
Var<Scalar> pool_rows(const Var<Scalar>& h, Pooling p) {
  return p == Pooling::kMean ? mean_rows(h) : max_rows(h);
}

template <typename Scalar>
struct EncoderParams {
  EncoderConfig cfg;
  Parameter<Scalar> embedding;  // [vocab, d_model]
  Parameter<Scalar> positions;  // [max_len, d_model]
  std::vector<EncoderLayer<Scalar>> layers;

  static EncoderParams init(const EncoderConfig& cfg, Index vocab_size, Rng& rng, const std::string& prefix = "encoder") {
    cfg.validate();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    EncoderParams p;
    p.cfg = cfg;
    p.embedding = init_param<Scalar>(prefix + ".embedding", vocab_size, cfg.d_model, bound, rng);
    p.positions = init_param<Scalar>(prefix + ".positions", cfg.max_len, cfg.d_model, bound, rng);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      EncoderLayer<Scalar> layer;
      layer.attn = AttentionProj<Scalar>::init(lp + ".attn", cfg.d_model, bound, rng);
      layer.ffn = FeedForward<Scalar>::init(lp + ".ffn", cfg.d_model, cfg.d_ff, cfg.d_model, bound, rng);
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(embedding), f(positions);
    for (auto& l : layers) l.for_each_param(f);
  }
};

/// Runs the layer stack over prepared input states H^(0).
template <typename Scalar>
Var<Scalar> encode_states(Tape<Scalar>& t, std::vector<EncoderLayer<Scalar>>& layers, Var<Scalar> h,
                          const EncoderConfig& cfg) {
  for (auto& layer : layers) h = encoder_layer_forward(t, layer, h, cfg);
  return h;
}

/// H^(0) = embedding rows + positions 0..T-1.
template <typename Scalar>
Var<Scalar> embed_tokens(Tape<Scalar>& t, Parameter<Scalar>& embedding, Parameter<Scalar>& positions,
                         std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("cannot encode an empty token sequence");
  if (static_cast<Index>(tokens.size()) > positions.value.rows())
    throw std::invalid_argument("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max length " +
                                std::to_string(positions.value.rows()));
  std::vector<int> pos(tokens.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  return add(gather_rows(t, embedding, tokens), gather_rows(t, positions, std::span<const int>(pos)));
}

/// Final-layer states H^(N) for a token sequence.
template <typename Scalar>
Var<Scalar> encoder_states(Tape<Scalar>& t, EncoderParams<Scalar>& p, std::span<const int> tokens) {
  return encode_states(t, p.layers, embed_tokens(t, p.embedding, p.positions, tokens), p.cfg);
}

/// c_query = Pooling(H^(N)).
template <typename Scalar>
ContextVector<Scalar> encode_query(Tape<Scalar>& t, EncoderParams<Scalar>& p, std::span<const int> tokens) {
  return {pool_rows(encoder_states(t, p, tokens), p.cfg.pooling), VectorRole::kQuery};
}

}  // namespace icvrag
