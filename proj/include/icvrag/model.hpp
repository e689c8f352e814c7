#pragma once

// Full retrieval-generation model and its forward pipeline:
//   question -> c_query -> c_db -> top-N docs -> v_icv -> c_att -> decoder.

#include "icvrag/config.hpp"
#include "icvrag/vector_store.hpp"

#include <optional>
#include <string>
#include <vector>

namespace icvrag {

template <typename Scalar>
struct ModelParams {
  ModelConfig cfg;
  EncoderParams<Scalar> encoder;
  DbEncoderParams<Scalar> db;
  FusionParams<Scalar> fusion;
  DecoderParams<Scalar> decoder;

  /// Initialization order is fixed, so one seed gives bit-identical weights.
  static ModelParams init(const ModelConfig& cfg, Index vocab_size, RngSeed seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    Rng enc_rng = make_rng(seed, 1), db_rng = make_rng(seed, 2), dec_rng = make_rng(seed, 3);
    p.encoder = EncoderParams<Scalar>::init(cfg.encoder, vocab_size, enc_rng);
    p.db = DbEncoderParams<Scalar>::init(cfg.db, cfg.encoder.d_model, db_rng);
    p.fusion = FusionParams<Scalar>::init(cfg.icv);
    p.decoder = DecoderParams<Scalar>::init(cfg.decoder, vocab_size, dec_rng);
    return p;
  }

  Index vocab_size() const { return decoder.vocab_size(); }

  template <typename F>
  void for_each_param(F&& f) {
    encoder.for_each_param(f);
    db.for_each_param(f);
    fusion.for_each_param(f);
    decoder.for_each_param(f);
  }

  void zero_grad() {
    for_each_param([](Parameter<Scalar>& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_param([&](Parameter<Scalar>& p) { n += static_cast<std::size_t>(p.value.size()); });
    return n;
  }

  /// Same weights in another precision.
  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out = ModelParams<Other>::init(cfg, vocab_size(), RngSeed{0});
    std::vector<const Parameter<Scalar>*> src;
    const_cast<ModelParams*>(this)->for_each_param([&](Parameter<Scalar>& p) { src.push_back(&p); });
    std::size_t i = 0;
    out.for_each_param([&](Parameter<Other>& p) {
      p.value = src[i++]->value.template cast<Other>();
      p.zero_grad();
    });
    return out;
  }
};

/// A QA record resolved to token ids and a store row.
struct Example {
  std::string id;
  TokenIds question;
  TokenIds answer;
  std::size_t gold_index = 0;
  std::string gold_doc_id;
  std::string answer_text;
};

std::vector<Example> prepare_examples(const std::vector<QARecord>& records, const Vocab& vocab,
                                      const VectorStore& store, const LengthLimits& limits);

template <typename Scalar>
struct PipelineForward {
  ContextVector<Scalar> c_query;
  ContextVector<Scalar> c_db;
  RetrievalResult retrieved;
  Var<Scalar> top_docs;  // [N, d], constants
  FusionOutput<Scalar> fusion;
  Var<Scalar> memory;  // [1 + N, d] = [c_att; top_docs]
};

/// Everything up to the decoder memory. Retrieval is a hard top-N selection
/// with no gradient; forced_topn replaces it with fixed store rows.
template <typename Scalar>
PipelineForward<Scalar> forward_pipeline(Tape<Scalar>& t, ModelParams<Scalar>& p, const VectorStore& store,
                                         std::span<const int> question,
                                         const std::vector<std::size_t>* forced_topn = nullptr) {
  if (store.dim() != p.cfg.db.d_db) throw ShapeError("vector store width differs from d_db");
  PipelineForward<Scalar> f;
  f.c_query = encode_query(t, p.encoder, question);
  ContextVector<Scalar> db_input = f.c_query;
  if (p.cfg.stop_cos_gradient) db_input.vec = detach(f.c_query.vec);
  f.c_db = to_db_space(t, p.db, db_input);

  if (forced_topn) {
    if (forced_topn->empty()) throw std::invalid_argument("forced top-N set is empty");
    for (auto i : *forced_topn) {
      if (i >= store.size()) throw std::out_of_range("forced document index outside the store");
      f.retrieved.hits.push_back({store.doc_ids()[i], i, cosine_sim(f.c_db.vec.value(), store.vectors().row(static_cast<Index>(i)))});
    }
  } else {
    f.retrieved = top_n(f.c_db.vec.value(), store, p.cfg.top_n);
  }
  f.top_docs = t.constant(store.rows<Scalar>(f.retrieved.indices()));

  Var<Scalar> scale = p.cfg.train_icv_scale ? t.parameter(p.fusion.icv_scale) : t.constant(p.fusion.icv_scale.value);
  ContextVector<Scalar> v_icv = compute_icv(f.top_docs, p.cfg.icv.pooling, scale);
  f.fusion = fuse_topn(f.c_query, f.top_docs, v_icv);
  f.memory = concat_rows({f.fusion.c_att.vec, f.top_docs});
  return f;
}

/// Decoder input [BOS, y_1..y_T] and targets [y_1..y_T, EOS].
inline std::pair<TokenIds, TokenIds> teacher_forcing_pair(const TokenIds& answer) {
  TokenIds in{Vocab::kBos};
  in.insert(in.end(), answer.begin(), answer.end());
  TokenIds target(answer);
  target.push_back(Vocab::kEos);
  return {std::move(in), std::move(target)};
}

template <typename Scalar>
struct ExampleLosses {
  Var<Scalar> l_cos;
  Var<Scalar> l_gen;
  Var<Scalar> logits;
  PipelineForward<Scalar> forward;
};

/// L_cos = 1 - cos(c_db, v_gold).
template <typename Scalar>
Var<Scalar> cos_loss(const ContextVector<Scalar>& c_db, const Var<Scalar>& v_gold) {
  c_db.expect(VectorRole::kDb, "cos_loss");
  Tape<Scalar>* t = c_db.vec.tape();
  return sub(t->constant(Matrix<Scalar>::Ones(1, 1)), cosine(c_db.vec, v_gold));
}

template <typename Scalar>
ExampleLosses<Scalar> example_losses(Tape<Scalar>& t, ModelParams<Scalar>& p, const VectorStore& store,
                                     const Example& ex, const std::vector<std::size_t>* forced_topn = nullptr) {
  ExampleLosses<Scalar> out;
  out.forward = forward_pipeline(t, p, store, ex.question, forced_topn);
  out.l_cos = cos_loss(out.forward.c_db, t.constant(store.rows<Scalar>({ex.gold_index})));
  auto [inputs, targets] = teacher_forcing_pair(ex.answer);
  out.logits = decoder_logits(t, p.decoder, inputs, out.forward.memory, out.forward.fusion.v_icv);
  out.l_gen = cross_entropy(out.logits, std::span<const int>(targets));
  return out;
}

struct Answer {
  RetrievalResult retrieved;
  GenerationResult generation;
  std::string text;
};

/// Retrieval plus greedy decoding without recording gradients.
template <typename Scalar>
Answer answer_question(ModelParams<Scalar>& p, const VectorStore& store, const Vocab& vocab, const TokenIds& question,
                       std::size_t max_len) {
  Tape<Scalar> t;
  t.set_grad_enabled(false);
  auto f = forward_pipeline(t, p, store, question);
  Answer a;
  a.retrieved = f.retrieved;
  a.generation = decode_greedy(p.decoder, f.memory.value(), f.fusion.v_icv.vec.value(), max_len);
  a.text = detokenize(a.generation.tokens, vocab);
  return a;
}

/// Retrieval only, returning up to n hits (n may exceed the model's top_n).
template <typename Scalar>
RetrievalResult retrieve(ModelParams<Scalar>& p, const VectorStore& store, const TokenIds& question, std::size_t n) {
  Tape<Scalar> t;
  t.set_grad_enabled(false);
  auto c_db = to_db_space(t, p.db, encode_query(t, p.encoder, question));
  return top_n(c_db.vec.value(), store, n);
}

}  // namespace icvrag
