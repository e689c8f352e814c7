#pragma once

// Projects c_query into the document-vector space:
//   c_db = FFN(Attention(c_query, W_DB))
// where W_DB is a learned slot bank used as both keys and values.

#include "icvrag/encoder.hpp"

namespace icvrag {

struct DbEncoderConfig {
  Index slots = 16;
  Index d_ff = 128;
  Index d_db = 64;
  Activation act = Activation::kRelu;
};

template <typename Scalar>
struct DbEncoderParams {
  DbEncoderConfig cfg;
  Parameter<Scalar> slots;  // [m_slots, d_model]
  FeedForward<Scalar> ffn;

  static DbEncoderParams init(const DbEncoderConfig& cfg, Index d_model, Rng& rng) {
    if (cfg.slots < 1) throw std::invalid_argument("db encoder needs at least one slot");
    if (cfg.d_ff < 1 || cfg.d_db < 1) throw std::invalid_argument("db encoder dimensions must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    DbEncoderParams p;
    p.cfg = cfg;
    p.slots = init_param<Scalar>("db.slots", cfg.slots, d_model, bound, rng);
    p.ffn = FeedForward<Scalar>::init("db.ffn", d_model, cfg.d_ff, cfg.d_db, bound, rng);
    p.ffn.act = cfg.act;
    return p;
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(slots);
    ffn.for_each_param(f);
  }
};

/// Slot attention output before the feed-forward block.
template <typename Scalar>
Var<Scalar> db_slot_attention(Tape<Scalar>& t, DbEncoderParams<Scalar>& p, const ContextVector<Scalar>& c_query) {
  c_query.expect(VectorRole::kQuery, "to_db_space");
  Var<Scalar> bank = t.parameter(p.slots);
  return scaled_dot_attention(c_query.vec, bank, bank);
}

/// c_query is read, never written; the returned vector is a new node.
template <typename Scalar>
ContextVector<Scalar> to_db_space(Tape<Scalar>& t, DbEncoderParams<Scalar>& p, const ContextVector<Scalar>& c_query) {
  return {p.ffn.forward(t, db_slot_attention(t, p, c_query)), VectorRole::kDb};
}

}  // namespace icvrag
