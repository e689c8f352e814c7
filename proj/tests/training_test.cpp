#include "support.hpp"

#include "icvrag/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

using namespace icvrag;
using namespace icvrag::testing;

namespace {

TrainConfig sgd(double lr) {
  TrainConfig c;
  c.optimizer = OptimizerKind::kSgd;
  c.lr = lr;
  return c;
}

template <typename Scalar>
std::vector<Matrix<Scalar>> snapshot(ModelParams<Scalar>& p) {
  std::vector<Matrix<Scalar>> out;
  p.for_each_param([&](Parameter<Scalar>& q) { out.push_back(q.value); });
  return out;
}

template <typename Scalar>
bool bit_equal(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

std::vector<LossReport> run_steps(Trainer<float>& tr, const std::vector<Example>& ex, std::uint64_t steps) {
  std::vector<LossReport> log;
  tr.run(ex, steps, [&](const LossReport& r) { log.push_back(r); });
  return log;
}

bool same_reports(const LossReport& a, const LossReport& b) {
  return a.step == b.step && a.alpha == b.alpha && a.l_cos == b.l_cos && a.l_gen == b.l_gen && a.l_combined == b.l_combined;
}

}  // namespace

TEST(GenLoss, PerfectPredictionIsZero) {
  MatrixXd d = MatrixXd::Zero(3, 5);
  d(0, 1) = d(1, 4) = d(2, 2) = 1.0;
  const std::vector<int> gold{1, 4, 2};
  EXPECT_EQ(gen_loss(d, std::span<const int>(gold)), 0.0);
}

TEST(GenLoss, UniformOverFourIsLnFour) {
  const MatrixXd d = MatrixXd::Constant(2, 4, 0.25);
  const std::vector<int> gold{0, 3};
  EXPECT_NEAR(gen_loss(d, std::span<const int>(gold)), 1.3862943611198906, 1e-12);
}

TEST(GenLoss, DecreasesAsGoldProbabilityRises) {
  Rng rng = make_rng(RngSeed{110});
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd row = random_matrix(1, 6, rng, 0.05, 1.0);
    row /= row.sum();
    const std::vector<int> gold{static_cast<int>(random_int(rng, 0, 5))};
    const double before = gen_loss(row, std::span<const int>(gold));
    MatrixXd up = row;
    up(0, gold[0]) += 0.3;
    up /= up.sum();
    EXPECT_LT(gen_loss(up, std::span<const int>(gold)), before);
  }
}

TEST(GenLoss, Errors) {
  const MatrixXd d = MatrixXd::Constant(2, 4, 0.25);
  const std::vector<int> short_gold{0}, bad{0, 4};
  EXPECT_THROW(gen_loss(d, std::span<const int>(short_gold)), ShapeError);
  EXPECT_THROW(gen_loss(d, std::span<const int>(bad)), std::out_of_range);
}

TEST(GenLoss, AgreesWithTapeCrossEntropy) {
  Rng rng = make_rng(RngSeed{111});
  const MatrixXd logits = random_matrix(4, 7, rng, -3, 3);
  const std::vector<int> gold{1, 6, 0, 3};
  Tape<double> t;
  const double tape = cross_entropy(t.constant(logits), std::span<const int>(gold)).item();
  EXPECT_NEAR(gen_loss(softmax_rows_value(logits), std::span<const int>(gold)), tape, 1e-12);
}

TEST(CosLoss, ParallelAntiparallelOrthogonal) {
  Eigen::RowVectorXd a(3), b(3);
  a << 1, 2, 3;
  EXPECT_NEAR(cos_loss_value(a, Eigen::RowVectorXd(2.5 * a)), 0.0, 1e-15);
  EXPECT_NEAR(cos_loss_value(a, Eigen::RowVectorXd(-a)), 2.0, 1e-15);
  b << 3, 0, -1;
  EXPECT_NEAR(cos_loss_value(a, b), 1.0, 1e-15);
  EXPECT_THROW(cos_loss_value(Eigen::RowVectorXd::Zero(3), a), std::domain_error);
}

TEST(CosLoss, TapeVersionMatchesAndStaysInRange) {
  Rng rng = make_rng(RngSeed{112});
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = random_int(rng, 1, 8);
    const MatrixXd a = random_matrix(1, d, rng), b = random_matrix(1, d, rng);
    Tape<double> t;
    const double v = cos_loss(ContextVector<double>{t.constant(a), VectorRole::kDb}, t.constant(b)).item();
    EXPECT_NEAR(v, cos_loss_value(a, b), 1e-12);
    EXPECT_GE(v, 0.0 - 1e-12);
    EXPECT_LE(v, 2.0 + 1e-12);
  }
  Tape<double> t;
  EXPECT_THROW(cos_loss(ContextVector<double>{t.constant(MatrixXd::Ones(1, 2)), VectorRole::kQuery}, t.constant(MatrixXd::Ones(1, 2))),
               RoleError);
}

TEST(CombinedLoss, Examples) {
  EXPECT_EQ(combined_loss(0.7, 3.0, 1.0), 0.7);
  EXPECT_EQ(combined_loss(0.7, 3.0, 0.0), 3.0);
  EXPECT_EQ(combined_loss(2.0, 1.0, 0.5), 1.5);
  EXPECT_THROW(combined_loss(1.0, 1.0, 1.5), std::invalid_argument);
  EXPECT_THROW(combined_loss(1.0, 1.0, -0.1), std::invalid_argument);
}

TEST(CombinedLoss, IsConvexCombination) {
  Rng rng = make_rng(RngSeed{113});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double c = 2 * u(rng), g = 10 * u(rng), a = u(rng);
    const double l = combined_loss(c, g, a);
    EXPECT_GE(l, std::min(c, g) - 1e-12);
    EXPECT_LE(l, std::max(c, g) + 1e-12);
  }
}

TEST(AlphaUpdate, Examples) {
  const TrainConfig cfg;
  TrainState s;
  EXPECT_EQ(alpha_update(s, 1.5, cfg), 1.0);
  EXPECT_FALSE(s.crossed);
  EXPECT_DOUBLE_EQ(alpha_update(s, 0.5, cfg), 0.9);
  EXPECT_TRUE(s.crossed);
}

TEST(AlphaUpdate, ThresholdIsInclusive) {
  const TrainConfig cfg;
  TrainState s;
  EXPECT_DOUBLE_EQ(alpha_update(s, 1.0, cfg), 0.9);
}

TEST(AlphaUpdate, LatchedTrajectory) {
  const TrainConfig cfg;
  TrainState s;
  const double in[] = {1.4, 1.2, 0.9, 1.3, 0.8};
  const double want[] = {1.0, 1.0, 0.9, 0.81, 0.729};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(alpha_update(s, in[i], cfg), want[i], 1e-12) << i;
}

TEST(AlphaUpdate, FloorsAtAlphaMinAndNeverRises) {
  Rng rng = make_rng(RngSeed{114});
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    TrainConfig cfg;
    cfg.tau = 0.1 + u(rng) / 2;
    cfg.gamma = 0.5 + u(rng) / 4.1;
    cfg.alpha_min = u(rng) / 2.1;
    TrainState s;
    double prev = 1.0;
    for (int step = 0; step < 200; ++step) {
      const double a = alpha_update(s, u(rng), cfg);
      EXPECT_GE(a, cfg.alpha_min);
      EXPECT_LE(a, 1.0);
      if (s.crossed) {
        EXPECT_LE(a, prev);
      } else {
        EXPECT_EQ(a, 1.0);
      }
      prev = a;
    }
    EXPECT_TRUE(s.crossed);
    EXPECT_DOUBLE_EQ(s.alpha, cfg.alpha_min);
  }
}

TEST(TrainConfig, Validation) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_THROW(bad([](TrainConfig& c) { c.tau = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.gamma = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.alpha_min = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr = -1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.beta2 = 1; }).validate(), std::invalid_argument);
}

TEST(LossLog, HeaderAndRoundTrippableLine) {
  EXPECT_EQ(loss_log_header(), "step,alpha,l_cos,l_gen,l_combined");
  const LossReport r{7, 0.9, 0.1 + 0.2, 2.0 / 3.0, 1e-300};
  const std::string line = loss_log_line(r);
  EXPECT_EQ(line.substr(0, 2), "7,");
  double alpha, c, g, l;
  unsigned long long step;
  ASSERT_EQ(std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &alpha, &c, &g, &l), 5);
  EXPECT_EQ(alpha, r.alpha);
  EXPECT_EQ(c, r.l_cos);
  EXPECT_EQ(g, r.l_gen);
  EXPECT_EQ(l, r.l_combined);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  for (auto opt : {OptimizerKind::kSgd, OptimizerKind::kMomentum, OptimizerKind::kAdam}) {
    Task task = make_task(6, 3, 8);
    auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{3});
    const auto before = snapshot(p);
    TrainConfig cfg = sgd(0.0);
    cfg.optimizer = opt;
    cfg.batch_size = 3;
    Trainer<float> tr(p, task.store, cfg);
    const auto log = run_steps(tr, task.examples, 4);
    ASSERT_EQ(log.size(), 4u);
    for (const auto& r : log) EXPECT_TRUE(std::isfinite(r.l_combined) && r.l_gen > 0.0);
    const auto after = snapshot(p);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bit_equal(before[i], after[i])) << i;
  }
}

TEST(Trainer, SingleExampleOverfits) {
  Task task = make_task(1, 5, 16);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{5});
  TrainConfig cfg = sgd(0.05);
  cfg.batch_size = 1;
  Trainer<float> tr(p, task.store, cfg);
  double best = 1e9;
  tr.run(task.examples, 500, [&](const LossReport& r) { best = std::min(best, r.l_combined); });
  EXPECT_LT(tr.state().l_combined, 0.1) << "best seen " << best;
}

TEST(Trainer, SameSeedSameTrajectory) {
  Task task = make_task(8, 4, 8);
  std::vector<std::vector<LossReport>> logs;
  std::vector<std::vector<Matrix<float>>> finals;
  for (int run = 0; run < 2; ++run) {
    auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{4});
    TrainConfig cfg;
    cfg.batch_size = 3;
    cfg.lr = 1e-2;
    Trainer<float> tr(p, task.store, cfg);
    logs.push_back(run_steps(tr, task.examples, 12));
    finals.push_back(snapshot(p));
  }
  for (std::size_t i = 0; i < logs[0].size(); ++i) EXPECT_TRUE(same_reports(logs[0][i], logs[1][i])) << i;
  for (std::size_t i = 0; i < finals[0].size(); ++i) EXPECT_TRUE(bit_equal(finals[0][i], finals[1][i]));
}

TEST(Trainer, EpochOrderIsPermutationAndSeeded) {
  Task task = make_task(3, 1, 8);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{1});
  TrainConfig cfg;
  Trainer<float> a(p, task.store, cfg);
  cfg.seed = 43;
  Trainer<float> b(p, task.store, cfg);
  bool differs = false;
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    auto o = a.epoch_order(epoch, 20);
    EXPECT_EQ(o, a.epoch_order(epoch, 20));
    differs = differs || o != b.epoch_order(epoch, 20);
    std::sort(o.begin(), o.end());
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(o[i], i);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.steps_per_epoch(25), 3u);
  EXPECT_EQ(a.total_steps(25), 3u * cfg.epochs);
}

TEST(Trainer, OutputHeadFrozenWhileAlphaIsOne) {
  for (auto opt : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    Task task = make_task(6, 6, 8);
    auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{6});
    const Matrix<float> w = p.decoder.out_w.value, b = p.decoder.out_b.value, enc = p.encoder.embedding.value;
    TrainConfig cfg = sgd(0.05);
    cfg.optimizer = opt;
    cfg.tau = 1e-12;  // unreachable, so alpha stays 1
    cfg.batch_size = 2;
    Trainer<float> tr(p, task.store, cfg);
    for (const auto& r : run_steps(tr, task.examples, 6)) EXPECT_EQ(r.alpha, 1.0);
    EXPECT_TRUE(bit_equal(w, p.decoder.out_w.value));
    EXPECT_TRUE(bit_equal(b, p.decoder.out_b.value));
    EXPECT_FALSE(bit_equal(enc, p.encoder.embedding.value));
  }
}

TEST(Trainer, IcvScaleStaysNonNegative) {
  Task task = make_task(6, 7, 8);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{7});
  p.fusion.icv_scale.value(0, 0) = 1e-4f;
  TrainConfig cfg = sgd(0.5);
  cfg.tau = 2.5;
  cfg.alpha_min = 0.0;
  cfg.batch_size = 2;
  Trainer<float> tr(p, task.store, cfg);
  tr.run(task.examples, 10, [&](const LossReport&) { EXPECT_GE(p.fusion.icv_scale.value(0, 0), 0.0f); });
}

TEST(Trainer, EmptyBatchIsAnError) {
  Task task = make_task(2, 8, 8);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{8});
  Trainer<float> tr(p, task.store, TrainConfig{});
  EXPECT_THROW(tr.train_step({}), std::invalid_argument);
  EXPECT_THROW(tr.run({}, 1), std::invalid_argument);
}

class FullModelGradient : public ::testing::TestWithParam<int> {};

TEST_P(FullModelGradient, MatchesFiniteDifferences) {
  Rng rng = make_rng(RngSeed{static_cast<std::uint64_t>(1200 + GetParam())});
  SmallSetup s = random_small_setup(rng);
  s.cfg.decoder.latent_shift = GetParam() % 4 != 3;
  auto p = ModelParams<double>::init(s.cfg, s.vocab, RngSeed{static_cast<std::uint64_t>(GetParam())});
  const auto rep = check_gradients(all_params(p), [&](Tape<double>& t) { return combined_example_loss(t, p, s, 0.5); }, rng);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  EXPECT_GT(rep.checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(RandomConfigs, FullModelGradient, ::testing::Range(0, 20));

TEST(FullModelGradient, StopCosGradientKeepsEncoderOutOfCosineLoss) {
  Rng rng = make_rng(RngSeed{115});
  SmallSetup s = random_small_setup(rng);
  s.cfg.stop_cos_gradient = true;
  auto p = ModelParams<double>::init(s.cfg, s.vocab, RngSeed{1});
  p.zero_grad();
  Tape<double> t;
  t.backward(combined_example_loss(t, p, s, 1.0));
  EXPECT_EQ(p.encoder.embedding.grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(p.db.slots.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Checkpoint, RoundTripIsBitEqual) {
  Task task = make_task(6, 9, 8);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{9});
  TrainConfig cfg;
  cfg.batch_size = 2;
  Trainer<float> tr(p, task.store, cfg);
  run_steps(tr, task.examples, 5);
  const auto bytes = serialize_checkpoint(p, task.vocab, cfg, tr.state(), tr.velocity());
  const auto ck = deserialize_checkpoint<float>(bytes);
  EXPECT_EQ(ck.state, tr.state());
  EXPECT_EQ(ck.vocab, task.vocab);
  EXPECT_EQ(to_json(ck.train), to_json(cfg));
  EXPECT_EQ(to_json(ck.params.cfg), to_json(p.cfg));
  auto mine = snapshot(p);
  auto theirs = snapshot(const_cast<ModelParams<float>&>(ck.params));
  ASSERT_EQ(mine.size(), theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) EXPECT_TRUE(bit_equal(mine[i], theirs[i])) << i;
  ASSERT_EQ(ck.velocity.size(), tr.velocity().size());
  EXPECT_EQ(ck.velocity.size(), 2 * mine.size());
  for (std::size_t i = 0; i < ck.velocity.size(); ++i) EXPECT_TRUE(bit_equal(ck.velocity[i], tr.velocity()[i]));
  auto again = ck.params;
  EXPECT_EQ(serialize_checkpoint(again, ck.vocab, ck.train, ck.state, ck.velocity), bytes);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  Task task = make_task(2, 10, 4);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{10});
  const auto good = serialize_checkpoint(p, task.vocab, TrainConfig{}, TrainState{}, {});
  for (std::size_t cut = 0; cut < good.size(); cut += 1 + cut / 7)
    EXPECT_THROW(deserialize_checkpoint<float>(std::vector<char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut))),
                 binio::FormatError)
        << cut;
  for (std::size_t pos : {std::size_t{9}, good.size() / 2, good.size() - 1}) {
    auto flipped = good;
    flipped[pos] ^= 0x10;
    EXPECT_THROW(deserialize_checkpoint<float>(flipped), binio::FormatError) << pos;
  }
  auto bad_magic = good;
  bad_magic[1] = 'Z';
  EXPECT_THROW(deserialize_checkpoint<float>(bad_magic), binio::FormatError);
  auto bad_version = good;
  bad_version[4] = 7;
  EXPECT_THROW(deserialize_checkpoint<float>(bad_version), binio::FormatError);
  EXPECT_THROW(deserialize_checkpoint<double>(good), binio::FormatError);
}

TEST(Checkpoint, FailedLoadLeavesExistingStateAlone) {
  ScratchDir dir("ckpt");
  Task task = make_task(2, 11, 4);
  auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{11});
  const std::string path = (dir / "model.ckpt").string();
  TrainState st;
  st.step = 3;
  save_checkpoint(path, p, task.vocab, TrainConfig{}, st);
  auto loaded = load_checkpoint<float>(path);
  EXPECT_EQ(loaded.state.step, 3u);

  const auto bytes = binio::read_file(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(loaded = load_checkpoint<float>(path), binio::FormatError);
  EXPECT_EQ(loaded.state.step, 3u);
  EXPECT_THROW(load_checkpoint<float>((dir / "missing.ckpt").string()), std::runtime_error);
  EXPECT_THROW(save_checkpoint((dir / "no" / "such" / "dir.ckpt").string(), p, task.vocab, TrainConfig{}, st),
               std::runtime_error);
  EXPECT_FALSE(std::filesystem::exists(dir / "no"));
}

TEST(Checkpoint, ResumedRunMatchesUnbrokenRun) {
  for (auto opt : {OptimizerKind::kSgd, OptimizerKind::kMomentum, OptimizerKind::kAdam}) {
    ScratchDir dir("resume");
    Task task = make_task(7, 12, 8);
    TrainConfig cfg;
    cfg.optimizer = opt;
    cfg.batch_size = 3;
    cfg.lr = 1e-2;
    auto p = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{12});
    Trainer<float> whole(p, task.store, cfg);
    const auto unbroken = run_steps(whole, task.examples, 14);

    auto q = ModelParams<float>::init(task.cfg, static_cast<Index>(task.vocab.size()), RngSeed{12});
    Trainer<float> first(q, task.store, cfg);
    auto log = run_steps(first, task.examples, 5);
    const std::string path = (dir / "mid.ckpt").string();
    save_checkpoint(path, q, task.vocab, cfg, first.state(), first.velocity());

    auto ck = load_checkpoint<float>(path);
    Trainer<float> second(ck.params, task.store, ck.train);
    second.restore(ck.state, ck.velocity);
    const auto rest = run_steps(second, task.examples, 14);
    log.insert(log.end(), rest.begin(), rest.end());
    ASSERT_EQ(log.size(), unbroken.size());
    for (std::size_t i = 0; i < log.size(); ++i) EXPECT_TRUE(same_reports(log[i], unbroken[i])) << i;
    const auto a = snapshot(p), b = snapshot(ck.params);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i], b[i])) << i;
  }
}
