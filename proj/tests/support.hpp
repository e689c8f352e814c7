#pragma once

// Shared test helpers: seeded random generators, a central-difference
// gradient checker and scratch directories.

#include "icvrag/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace icvrag::testing {

using MatrixXd = Matrix<double>;

inline MatrixXd random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline Index random_int(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline Matrix<float> random_unit_rows(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<float> m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    Eigen::RowVectorXd r(cols);
    for (Index j = 0; j < cols; ++j) r(j) = n(rng);
    m.row(i) = (r / r.norm()).cast<float>();
  }
  return m;
}

inline VectorStore random_store(Index rows, Index cols, Rng& rng) {
  std::vector<std::string> ids;
  for (Index i = 0; i < rows; ++i) ids.push_back("doc" + std::to_string(i));
  return VectorStore(random_unit_rows(rows, cols, rng), std::move(ids));
}

/// |a - n| / max(|a|, |n|); pairs that agree to 1e-9 absolute count as exact.
inline double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff < 1e-9) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares backward() against central differences for the given parameters.
/// loss_fn builds the scalar loss on the tape it is handed. At most
/// max_entries coordinates per parameter are probed, chosen by rng.
inline GradCheckReport check_gradients(const std::vector<Parameter<double>*>& params,
                                       const std::function<Var<double>(Tape<double>&)>& loss_fn, Rng& rng,
                                       double eps = 1e-5, std::size_t max_entries = 8) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> t;
    t.backward(loss_fn(t));
  }
  auto eval = [&] {
    Tape<double> t;
    t.set_grad_enabled(false);
    return loss_fn(t).item();
  };
  GradCheckReport rep;
  for (auto* p : params) {
    const Index n = p->value.size();
    std::vector<Index> picks(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = i;
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(std::min<std::size_t>(picks.size(), max_entries));
    for (Index flat : picks) {
      double& w = p->value.data()[flat];
      const double saved = w;
      w = saved + eps;
      const double up = eval();
      w = saved - eps;
      const double down = eval();
      w = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad.data()[flat];
      const double rel = relative_error(analytic, numeric);
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = p->name + "[" + std::to_string(flat) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> all_params(ModelParams<Scalar>& p) {
  std::vector<Parameter<Scalar>*> out;
  p.for_each_param([&](Parameter<Scalar>& q) { out.push_back(&q); });
  return out;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("icvrag_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small random model config for gradient and oracle tests.
struct SmallSetup {
  ModelConfig cfg;
  Index vocab = 0;
  VectorStore store;
  Example example;
  std::vector<std::size_t> forced;
};

inline SmallSetup random_small_setup(Rng& rng) {
  SmallSetup s;
  const Index widths[] = {4, 6, 8, 12, 16};
  const Index d = widths[random_int(rng, 0, 4)];
  auto& c = s.cfg;
  c.encoder.d_model = d;
  c.encoder.d_ff = random_int(rng, 3, 2 * d);
  c.encoder.layers = static_cast<int>(random_int(rng, 1, 2));
  c.encoder.heads = (d % 2 == 0 && random_int(rng, 0, 1) == 1) ? 2 : 1;
  c.encoder.max_len = 6;
  c.encoder.pooling = random_int(rng, 0, 1) == 0 ? Pooling::kMean : Pooling::kMax;
  c.encoder.pre_norm = random_int(rng, 0, 2) == 0;
  c.db.slots = random_int(rng, 1, 5);
  c.db.d_ff = random_int(rng, 3, 2 * d);
  c.db.d_db = d;
  c.decoder.d_model = d;
  c.decoder.d_ff = c.encoder.d_ff;
  c.decoder.heads = c.encoder.heads;
  c.decoder.pre_norm = c.encoder.pre_norm;
  c.decoder.layers = static_cast<int>(random_int(rng, 1, 2));
  c.decoder.max_len = 6;
  c.icv.pooling = random_int(rng, 0, 1) == 0 ? Pooling::kMean : Pooling::kMax;
  c.icv.icv_scale = std::uniform_real_distribution<double>(0.3, 1.5)(rng);
  c.limits = {6, 5, 6};
  c.top_n = static_cast<std::size_t>(random_int(rng, 1, 3));
  s.vocab = random_int(rng, 6, 14);
  s.store = random_store(random_int(rng, 4, 8), d, rng);

  const Index tq = random_int(rng, 1, 6), ta = random_int(rng, 1, 5);
  for (Index i = 0; i < tq; ++i) s.example.question.push_back(static_cast<int>(random_int(rng, Vocab::kReserved, s.vocab - 1)));
  for (Index i = 0; i < ta; ++i) s.example.answer.push_back(static_cast<int>(random_int(rng, Vocab::kReserved, s.vocab - 1)));
  s.example.gold_index = static_cast<std::size_t>(random_int(rng, 0, static_cast<Index>(s.store.size()) - 1));
  s.example.gold_doc_id = s.store.doc_ids()[s.example.gold_index];
  std::vector<std::size_t> all(s.store.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  s.forced.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(c.top_n));
  return s;
}

/// Synthetic corpus resolved end to end: vocab, index and examples.
struct Task {
  Corpus corpus;
  ModelConfig cfg;
  Vocab vocab;
  VectorStore store;
  std::vector<Example> examples;
};

/// Default model shape unless d is given, in which case a small model of width d.
inline Task make_task(std::size_t pairs, std::uint64_t seed, Index d = 0) {
  Task t;
  t.corpus = gen_synthetic(pairs, RngSeed{seed});
  if (d > 0) {
    t.cfg.encoder.d_model = t.cfg.decoder.d_model = t.cfg.db.d_db = d;
    t.cfg.encoder.d_ff = t.cfg.decoder.d_ff = t.cfg.db.d_ff = 2 * d;
    t.cfg.encoder.layers = t.cfg.decoder.layers = 1;
    t.cfg.db.slots = 4;
    t.cfg.top_n = std::min<std::size_t>(3, t.corpus.documents.size());
  }
  t.cfg.top_n = std::min(t.cfg.top_n, t.corpus.documents.size());
  t.vocab = build_vocab(t.corpus);
  t.store = build_index(t.corpus.documents, ReferenceEncoder(reference_encoder_config(t.cfg), RngSeed{seed}));
  t.examples = prepare_examples(t.corpus.records, t.vocab, t.store, t.cfg.limits);
  return t;
}

/// alpha * L_cos + (1 - alpha) * L_gen for one example with a fixed top-N set.
inline Var<double> combined_example_loss(Tape<double>& t, ModelParams<double>& p, const SmallSetup& s, double alpha) {
  auto l = example_losses(t, p, s.store, s.example, &s.forced);
  return add(scale(l.l_cos, alpha), scale(l.l_gen, 1.0 - alpha));
}

}  // namespace icvrag::testing
