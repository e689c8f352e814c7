#pragma once

// In-context vector fusion.
//
// The ICV is a pooled summary of the retrieved document vectors. It shifts
// attention keys (K + v_icv) and, in the decoder, latent states (H + v_icv).
// fuse_topn attends c_query over the shifted document keys and returns the
// weighted sum of the unshifted document vectors as c_att.

#include "icvrag/encoder.hpp"

#include <stdexcept>

namespace icvrag {

struct IcvConfig {
  Pooling pooling = Pooling::kMean;
  double icv_scale = 1.0;  // lambda, initial value when trained

  void validate() const {
    if (!std::isfinite(icv_scale) || icv_scale < 0.0) throw std::invalid_argument("icv_scale must be finite and >= 0");
  }
};

/// Learned ICV strength. A single 1x1 weight, kept >= 0 by the optimizer.
template <typename Scalar>
struct FusionParams {
  Parameter<Scalar> icv_scale;

  static FusionParams init(const IcvConfig& cfg) {
    cfg.validate();
    FusionParams p;
    p.icv_scale = Parameter<Scalar>("fusion.icv_scale", Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(cfg.icv_scale)));
    return p;
  }

  template <typename F>
  void for_each_param(F&& f) {
    f(icv_scale);
  }
};

template <typename Scalar>
struct FusionOutput {
  ContextVector<Scalar> c_att;
  Var<Scalar> weights;  // [1, N]
  ContextVector<Scalar> v_icv;
};

/// v_icv = scale * g(latents), latents one per row.
template <typename Scalar>
ContextVector<Scalar> compute_icv(const Var<Scalar>& latents, Pooling pooling, const Var<Scalar>& scale) {
  if (latents.rows() == 0) throw std::invalid_argument("compute_icv needs at least one latent vector");
  return {scale_by(pool_rows(latents, pooling), scale), VectorRole::kIcv};
}

template <typename Scalar>
ContextVector<Scalar> compute_icv(const Var<Scalar>& latents, const IcvConfig& cfg) {
  cfg.validate();
  if (latents.rows() == 0) throw std::invalid_argument("compute_icv needs at least one latent vector");
  return {scale(pool_rows(latents, cfg.pooling), static_cast<Scalar>(cfg.icv_scale)), VectorRole::kIcv};
}

/// H + v_icv on every row.
template <typename Scalar>
Var<Scalar> shift_latents(const Var<Scalar>& h, const ContextVector<Scalar>& v_icv) {
  v_icv.expect(VectorRole::kIcv, "shift_latents");
  if (v_icv.dim() != h.cols())
    throw ShapeError("shift_latents: ICV width " + std::to_string(v_icv.dim()) + " != state width " +
                     std::to_string(h.cols()));
  return add_row(h, v_icv.vec);
}

/// softmax(Q (K + v_icv)^T / sqrt(d_k)) V with unshifted values.
template <typename Scalar>
Var<Scalar> icv_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                          const ContextVector<Scalar>& v_icv, bool causal = false, int heads = 1) {
  v_icv.expect(VectorRole::kIcv, "icv_attention");
  if (v_icv.dim() != k.cols())
    throw ShapeError("icv_attention: ICV width " + std::to_string(v_icv.dim()) + " != key width " +
                     std::to_string(k.cols()));
  return multi_head_attention(q, add_row(k, v_icv.vec), v, heads, causal);
}

/// Cross-attention of c_query over the top-N document vectors.
template <typename Scalar>
FusionOutput<Scalar> fuse_topn(const ContextVector<Scalar>& c_query, const Var<Scalar>& top_docs,
                               const ContextVector<Scalar>& v_icv) {
  c_query.expect(VectorRole::kQuery, "fuse_topn");
  v_icv.expect(VectorRole::kIcv, "fuse_topn");
  if (top_docs.rows() == 0) throw std::invalid_argument("fuse_topn needs at least one document vector");
  if (top_docs.cols() != c_query.dim() || v_icv.dim() != top_docs.cols())
    throw ShapeError("fuse_topn: query, ICV and document widths must agree");
  Var<Scalar> weights = attention_weights(c_query.vec, add_row(top_docs, v_icv.vec));
  return {{matmul(weights, top_docs), VectorRole::kAttended}, weights, v_icv};
}

}  // namespace icvrag
