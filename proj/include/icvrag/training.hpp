#pragma once

// Losses, the alpha weighting schedule and the optimizer loop.
//
//   L = alpha * L_cos + (1 - alpha) * L_gen
//
// alpha stays at 1 until the batch-mean L_cos first drops to tau or below;
// from then on it decays multiplicatively by gamma each step, floored at
// alpha_min. The crossing latches, so alpha never climbs back to 1.

#include "icvrag/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace icvrag {

/// Mean negative log-likelihood of gold tokens under per-step distributions.
template <typename Derived>
double gen_loss(const Eigen::MatrixBase<Derived>& dists, std::span<const int> gold) {
  if (static_cast<Index>(gold.size()) != dists.rows())
    throw ShapeError("gen_loss: " + std::to_string(gold.size()) + " gold tokens for " + std::to_string(dists.rows()) +
                     " distributions");
  if (gold.empty()) throw ShapeError("gen_loss over zero steps");
  double nll = 0.0;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    if (gold[t] < 0 || gold[t] >= dists.cols()) throw std::out_of_range("gold token outside vocabulary");
    nll -= std::log(static_cast<double>(dists(static_cast<Index>(t), gold[t])));
  }
  return nll / static_cast<double>(gold.size());
}

/// 1 - cos(c_db, v_gold) for plain vectors.
template <typename A, typename B>
double cos_loss_value(const Eigen::MatrixBase<A>& c_db, const Eigen::MatrixBase<B>& v_gold) {
  return 1.0 - cosine_sim(c_db, v_gold);
}

inline double combined_loss(double l_cos, double l_gen, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  return alpha * l_cos + (1.0 - alpha) * l_gen;
}

struct TrainState {
  std::uint64_t step = 0;
  double alpha = 1.0;
  bool crossed = false;
  double l_cos = 0.0;
  double l_gen = 0.0;
  double l_combined = 0.0;

  bool operator==(const TrainState&) const = default;
};

/// Updates and returns alpha for a new batch-mean L_cos.
inline double alpha_update(TrainState& s, double l_cos, const TrainConfig& cfg) {
  if (!s.crossed && l_cos <= cfg.tau) s.crossed = true;
  s.alpha = s.crossed ? std::max(cfg.alpha_min, cfg.gamma * s.alpha) : 1.0;
  return s.alpha;
}

struct LossReport {
  std::uint64_t step = 0;
  double alpha = 1.0;
  double l_cos = 0.0;
  double l_gen = 0.0;
  double l_combined = 0.0;
};

std::string loss_log_header();
std::string loss_log_line(const LossReport& r);

template <typename Scalar>
class Trainer {
 public:
  Trainer(ModelParams<Scalar>& params, const VectorStore& store, TrainConfig cfg)
      : params_(params), store_(store), cfg_(cfg) {
    cfg_.validate();
  }

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<Matrix<Scalar>>& velocity() const { return velocity_; }

  void restore(const TrainState& s, std::vector<Matrix<Scalar>> velocity) {
    state_ = s;
    velocity_ = std::move(velocity);
  }

  std::size_t steps_per_epoch(std::size_t n_examples) const { return (n_examples + cfg_.batch_size - 1) / cfg_.batch_size; }

  /// Example order for an epoch; a pure function of (seed, epoch).
  std::vector<std::size_t> epoch_order(std::size_t epoch, std::size_t n) const {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(RngSeed{cfg_.seed}, 1000 + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    return order;
  }

  /// Batch consumed by global step `step`.
  std::vector<const Example*> batch_for_step(std::span<const Example> examples, std::uint64_t step) const {
    const std::size_t spe = steps_per_epoch(examples.size());
    const auto order = epoch_order(static_cast<std::size_t>(step / spe), examples.size());
    const std::size_t begin = static_cast<std::size_t>(step % spe) * cfg_.batch_size;
    const std::size_t end = std::min(examples.size(), begin + cfg_.batch_size);
    std::vector<const Example*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&examples[order[i]]);
    return batch;
  }

  /// forward -> losses -> alpha update -> backward -> parameter update.
  LossReport train_step(std::span<const Example* const> batch) {
    if (batch.empty()) throw std::invalid_argument("train_step on an empty batch");
    Tape<Scalar> t;
    std::vector<ExampleLosses<Scalar>> parts;
    parts.reserve(batch.size());
    double sum_cos = 0.0, sum_gen = 0.0;
    for (const Example* ex : batch) {
      parts.push_back(example_losses(t, params_, store_, *ex));
      sum_cos += static_cast<double>(parts.back().l_cos.item());
      sum_gen += static_cast<double>(parts.back().l_gen.item());
    }
    const double b = static_cast<double>(batch.size());
    const double mean_cos = sum_cos / b, mean_gen = sum_gen / b;
    const double alpha = alpha_update(state_, mean_cos, cfg_);

    Var<Scalar> total = t.constant(Matrix<Scalar>::Zero(1, 1));
    for (const auto& part : parts) {
      total = add(total, scale(part.l_cos, static_cast<Scalar>(alpha / b)));
      total = add(total, scale(part.l_gen, static_cast<Scalar>((1.0 - alpha) / b)));
    }
    params_.zero_grad();
    t.backward(total);
    apply_update();

    ++state_.step;
    state_.l_cos = mean_cos;
    state_.l_gen = mean_gen;
    state_.l_combined = combined_loss(mean_cos, mean_gen, alpha);
    return {state_.step, alpha, mean_cos, mean_gen, state_.l_combined};
  }

  /// Trains until state().step == total_steps, calling on_step after each step.
  void run(std::span<const Example> examples, std::uint64_t total_steps,
           const std::function<void(const LossReport&)>& on_step = {}) {
    if (examples.empty()) throw std::invalid_argument("no training examples");
    while (state_.step < total_steps) {
      const auto batch = batch_for_step(examples, state_.step);
      const LossReport r = train_step(batch);
      if (on_step) on_step(r);
    }
  }

  std::uint64_t total_steps(std::size_t n_examples) const { return cfg_.epochs * steps_per_epoch(n_examples); }

 private:
  void apply_update() {
    std::vector<Parameter<Scalar>*> ps;
    params_.for_each_param([&](Parameter<Scalar>& p) { ps.push_back(&p); });
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (auto* p : ps) sq += static_cast<double>(p->grad.squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm)
        for (auto* p : ps) p->grad *= static_cast<Scalar>(cfg_.clip_norm / norm);
    }
    const auto lr = static_cast<Scalar>(cfg_.lr);
    const std::size_t buffers = cfg_.optimizer == OptimizerKind::kAdam ? 2 * ps.size()
                                : cfg_.optimizer == OptimizerKind::kMomentum ? ps.size()
                                                                             : 0;
    if (velocity_.size() != buffers) {
      velocity_.clear();
      for (std::size_t i = 0; i < buffers; ++i) {
        const auto* p = ps[i % ps.size()];
        velocity_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    const auto mu = static_cast<Scalar>(cfg_.momentum);
    switch (cfg_.optimizer) {
      case OptimizerKind::kSgd:
        for (auto* p : ps) p->value -= lr * p->grad;
        break;
      case OptimizerKind::kMomentum:
        for (std::size_t i = 0; i < ps.size(); ++i) {
          velocity_[i] = mu * velocity_[i] + ps[i]->grad;
          ps[i]->value -= lr * velocity_[i];
        }
        break;
      case OptimizerKind::kAdam: {
        // velocity_ = [first moments..., second moments...]; bias correction uses the 1-based step.
        const auto b2 = static_cast<Scalar>(cfg_.beta2);
        const double t = static_cast<double>(state_.step + 1);
        const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg_.momentum, t));
        const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg_.beta2, t));
        const Scalar eps(1e-8);
        for (std::size_t i = 0; i < ps.size(); ++i) {
          auto& m = velocity_[i];
          auto& v = velocity_[ps.size() + i];
          m = mu * m + (Scalar(1) - mu) * ps[i]->grad;
          v = b2 * v + (Scalar(1) - b2) * ps[i]->grad.cwiseAbs2();
          ps[i]->value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        }
        break;
      }
    }
    auto& lambda = params_.fusion.icv_scale.value;
    lambda = lambda.cwiseMax(Scalar(0));
  }

  ModelParams<Scalar>& params_;
  const VectorStore& store_;
  TrainConfig cfg_;
  TrainState state_;
  std::vector<Matrix<Scalar>> velocity_;
};

}  // namespace icvrag
