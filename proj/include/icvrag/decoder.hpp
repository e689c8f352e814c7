#pragma once

// Autoregressive answer decoder. Each layer runs masked self-attention over
// the prefix, ICV key-shifted cross-attention over the memory
// [c_att; v_top_1..N], then a feed-forward block, all residual. The output
// head is softmax(h W_out + b_out).

#include "icvrag/corpus.hpp"
#include "icvrag/icv_fusion.hpp"

#include <random>
#include <span>

namespace icvrag {

struct DecoderConfig {
  Index d_model = 64;
  Index d_ff = 128;
  int layers = 2;
  int heads = 1;
  Index max_len = 32;
  bool pre_norm = false;
  bool latent_shift = true;  // add v_icv to the input states
  bool key_shift = true;     // add v_icv to cross-attention keys

  void validate() const {
    if (d_model < 1 || d_ff < 1 || max_len < 2 || heads < 1) throw std::invalid_argument("decoder dimensions out of range");
    if (layers < 1) throw std::invalid_argument("decoder needs at least one layer");
    if (d_model % heads != 0) throw std::invalid_argument("d_model must be divisible by the head count");
  }
};

template <typename Scalar>
struct DecoderLayer {
  AttentionProj<Scalar> self_attn;
  AttentionProj<Scalar> cross_attn;
  FeedForward<Scalar> ffn;

  template <typename F>
  void for_each_param(F&& f) {
    self_attn.for_each_param(f);
    cross_attn.for_each_param(f);
    ffn.for_each_param(f);
  }
};

template <typename Scalar>
struct DecoderParams {
  DecoderConfig cfg;
  Parameter<Scalar> embedding;  // [vocab, d_model]
  Parameter<Scalar> positions;  // [max_len, d_model]
  std::vector<DecoderLayer<Scalar>> layers;
  Parameter<Scalar> out_w;  // [d_model, vocab]
  Parameter<Scalar> out_b;  // [1, vocab]

  static DecoderParams init(const DecoderConfig& cfg, Index vocab_size, Rng& rng) {
    cfg.validate();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    DecoderParams p;
    p.cfg = cfg;
    p.embedding = init_param<Scalar>("decoder.embedding", vocab_size, cfg.d_model, bound, rng);
    p.positions = init_param<Scalar>("decoder.positions", cfg.max_len, cfg.d_model, bound, rng);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string lp = "decoder.layer" + std::to_string(l);
      DecoderLayer<Scalar> layer;
      layer.self_attn = AttentionProj<Scalar>::init(lp + ".self", cfg.d_model, bound, rng);
      layer.cross_attn = AttentionProj<Scalar>::init(lp + ".cross", cfg.d_model, bound, rng);
      layer.ffn = FeedForward<Scalar>::init(lp + ".ffn", cfg.d_model, cfg.d_ff, cfg.d_model, bound, rng);
      p.layers.push_back(std::move(layer));
    }
    p.out_w = init_param<Scalar>("decoder.out_w", cfg.d_model, vocab_size, bound, rng);
    p.out_b = zero_param<Scalar>("decoder.out_b", 1, vocab_size);
    return p;
  }

  Index vocab_size() const { return out_b.value.cols(); }

  template <typename F>
  void for_each_param(F&& f) {
    f(embedding), f(positions);
    for (auto& l : layers) l.for_each_param(f);
    f(out_w), f(out_b);
  }
};

/// Logits [T, vocab] for every position of an input prefix (causally masked).
template <typename Scalar>
Var<Scalar> decoder_logits(Tape<Scalar>& t, DecoderParams<Scalar>& p, std::span<const int> inputs,
                           const Var<Scalar>& memory, const ContextVector<Scalar>& v_icv) {
  if (inputs.empty()) throw std::invalid_argument("decoder needs a non-empty prefix");
  if (memory.cols() != p.cfg.d_model) throw ShapeError("decoder memory width differs from d_model");
  const auto& cfg = p.cfg;
  Var<Scalar> h = embed_tokens(t, p.embedding, p.positions, inputs);
  if (cfg.latent_shift) h = shift_latents(h, v_icv);
  for (auto& layer : p.layers) {
    Var<Scalar> x = maybe_norm(h, cfg.pre_norm);
    Var<Scalar> sq = matmul(x, t.parameter(layer.self_attn.wq));
    Var<Scalar> sk = matmul(x, t.parameter(layer.self_attn.wk));
    Var<Scalar> sv = matmul(x, t.parameter(layer.self_attn.wv));
    h = add(h, multi_head_attention(sq, sk, sv, cfg.heads, /*causal=*/true));

    x = maybe_norm(h, cfg.pre_norm);
    Var<Scalar> cq = matmul(x, t.parameter(layer.cross_attn.wq));
    Var<Scalar> ck = matmul(memory, t.parameter(layer.cross_attn.wk));
    Var<Scalar> cv = matmul(memory, t.parameter(layer.cross_attn.wv));
    Var<Scalar> cross =
        cfg.key_shift ? icv_attention(cq, ck, cv, v_icv, false, cfg.heads) : multi_head_attention(cq, ck, cv, cfg.heads);
    h = add(h, cross);

    h = add(h, layer.ffn.forward(t, maybe_norm(h, cfg.pre_norm)));
  }
  return add_row(matmul(h, t.parameter(p.out_w)), t.parameter(p.out_b));
}

/// Row-wise output distributions for a teacher-forced input sequence.
template <typename Scalar>
Matrix<Scalar> teacher_forced_distributions(DecoderParams<Scalar>& p, std::span<const int> inputs,
                                            const Matrix<Scalar>& memory, const Matrix<Scalar>& v_icv) {
  Tape<Scalar> t;
  t.set_grad_enabled(false);
  ContextVector<Scalar> icv{t.constant(v_icv), VectorRole::kIcv};
  return softmax_rows_value(decoder_logits(t, p, inputs, t.constant(memory), icv).value());
}

/// Next-token distribution after a BOS-led prefix.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> step_logits(DecoderParams<Scalar>& p, std::span<const int> prefix,
                                                     const Matrix<Scalar>& memory, const Matrix<Scalar>& v_icv) {
  if (prefix.empty()) throw std::invalid_argument("step_logits needs a non-empty prefix");
  if (prefix.front() != Vocab::kBos) throw std::invalid_argument("decoder prefix must start with BOS");
  const Matrix<Scalar> d = teacher_forced_distributions(p, prefix, memory, v_icv);
  return d.row(d.rows() - 1);
}

/// Draws an index from a probability row by inverse CDF.
template <typename Row>
int sample_categorical(const Row& probs, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  double acc = 0.0;
  Index last_positive = 0;
  for (Index i = 0; i < probs.size(); ++i) {
    const double pi = static_cast<double>(probs(i));
    if (pi <= 0.0) continue;
    last_positive = i;
    acc += pi;
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(last_positive);
}

struct GenerationResult {
  TokenIds tokens;                    // answer tokens, BOS and EOS excluded
  Matrix<double> distributions;       // one row per decoding step, including the EOS step
  bool hit_eos = false;
};

namespace detail {

template <typename Scalar, typename Pick>
GenerationResult decode_loop(DecoderParams<Scalar>& p, const Matrix<Scalar>& memory, const Matrix<Scalar>& v_icv,
                             std::size_t max_len, Pick&& pick) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  const std::size_t limit = std::min<std::size_t>(max_len, static_cast<std::size_t>(p.cfg.max_len - 1));
  GenerationResult out;
  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> rows;
  TokenIds prefix{Vocab::kBos};
  while (out.tokens.size() < limit) {
    const auto dist = step_logits(p, std::span<const int>(prefix), memory, v_icv);
    rows.push_back(dist.template cast<double>());
    const int next = pick(dist);
    if (next == Vocab::kEos) {
      out.hit_eos = true;
      break;
    }
    out.tokens.push_back(next);
    prefix.push_back(next);
  }
  out.distributions.resize(static_cast<Index>(rows.size()), p.vocab_size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.distributions.row(static_cast<Index>(i)) = rows[i];
  return out;
}

}  // namespace detail

/// Argmax decoding; ties resolve to the lowest token id.
template <typename Scalar>
GenerationResult decode_greedy(DecoderParams<Scalar>& p, const Matrix<Scalar>& memory, const Matrix<Scalar>& v_icv,
                               std::size_t max_len) {
  return detail::decode_loop(p, memory, v_icv, max_len, [](const auto& dist) {
    Index best = 0;
    dist.maxCoeff(&best);
    return static_cast<int>(best);
  });
}

/// Multinomial sampling from each step distribution, reproducible for a seed.
template <typename Scalar>
GenerationResult decode_sample(DecoderParams<Scalar>& p, const Matrix<Scalar>& memory, const Matrix<Scalar>& v_icv,
                               std::size_t max_len, RngSeed seed) {
  Rng rng = make_rng(seed, 0x5a);
  return detail::decode_loop(p, memory, v_icv, max_len, [&rng](const auto& dist) {
    return sample_categorical(dist, rng);
  });
}

}  // namespace icvrag
