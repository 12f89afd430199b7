#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mensa/copula.hpp"
#include "mensa/error.hpp"
#include "mensa/training.hpp"

using namespace mensa;
using namespace mensa::train;
using data::StateEncodedDataset;

namespace {

MensaModel zero_model(std::size_t d, std::size_t P, std::size_t psi = 1) {
  MensaConfig c;
  c.num_features = d;
  c.num_states = P;
  c.num_components = psi;
  c.hidden_width = 4;
  MensaModel m(c);
  return m;
}

MensaModel random_model(std::mt19937_64& rng, std::size_t d, std::size_t P, std::size_t psi) {
  MensaConfig c;
  c.num_features = d;
  c.num_states = P;
  c.num_components = psi;
  c.hidden_width = 5;
  c.seed = rng();
  auto m = init_model(c);
  std::normal_distribution<double> n(0.0, 0.4);
  for (double& v : m.params().values()) v += n(rng);
  return m;
}

StateEncodedDataset random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                 std::size_t K) {
  std::normal_distribution<double> nx(0.0, 1.0);
  std::uniform_real_distribution<double> ut(0.2, 3.0);
  Eigen::MatrixXd x(n, d), t(n, K);
  Eigen::MatrixXi e(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = nx(rng);
    for (std::size_t k = 0; k < K; ++k) {
      t(i, k) = ut(rng);
      e(i, k) = rng() % 3 != 0;
    }
  }
  return data::encode_event_free(x, t, e);
}

StateEncodedDataset one_row(std::vector<double> x, std::vector<double> t, std::vector<int> e) {
  StateEncodedDataset b;
  b.x = Eigen::Map<Eigen::RowVectorXd>(x.data(), x.size());
  b.times = Eigen::Map<Eigen::RowVectorXd>(t.data(), t.size());
  b.events = Eigen::Map<Eigen::RowVectorXi>(e.data(), e.size());
  return b;
}

StateEncodedDataset stack(const StateEncodedDataset& a, const StateEncodedDataset& b) {
  StateEncodedDataset out;
  out.x.resize(a.x.rows() + b.x.rows(), a.x.cols());
  out.x << a.x, b.x;
  out.times.resize(a.times.rows() + b.times.rows(), a.times.cols());
  out.times << a.times, b.times;
  out.events.resize(a.events.rows() + b.events.rows(), a.events.cols());
  out.events << a.events, b.events;
  return out;
}

LossOptions multi(TrajectorySet t = {}) { return {Mode::Multi, std::move(t), false}; }

}  // namespace

TEST(Likelihood, CompetingExponentialExample) {
  const auto m = zero_model(1, 2);
  const auto b = one_row({0.0}, {1.0, 1.0}, {0, 1});
  EXPECT_NEAR(nll_competing(m, b), 2.0, 1e-15);
}

TEST(Likelihood, CensoredLossDecreasesWithSurvival) {
  auto m = zero_model(1, 2);
  const auto b = one_row({0.0}, {2.0, 2.0}, {0, 0});
  double prev_loss = 1e300;
  double prev_s = 0.0;
  for (double log_scale : {-1.0, 0.0, 1.0, 2.0}) {
    for (std::size_t p = 0; p < 2; ++p) m.params().tensor(state_tensor_name(p, "scale_bias"))[0] = log_scale;
    const double s = std::exp(m.log_surv(std::vector<double>{0.0}, 2.0, 0)) *
                     std::exp(m.log_surv(std::vector<double>{0.0}, 2.0, 1));
    const double loss = nll_competing(m, b);
    EXPECT_NEAR(loss, -std::log(s), 1e-12);
    EXPECT_GT(s, prev_s);
    EXPECT_LT(loss, prev_loss);
    prev_s = s;
    prev_loss = loss;
  }
}

TEST(Likelihood, DuplicatingRowsDoublesTheSum) {
  std::mt19937_64 rng(1);
  const auto m = random_model(rng, 3, 3, 2);
  const auto b = random_batch(rng, 6, 3, 2);
  EXPECT_NEAR(nll_multi(m, stack(b, b)), 2 * nll_multi(m, b), 1e-12);
  EXPECT_NEAR(nll_competing(m, stack(b, b)), 2 * nll_competing(m, b), 1e-12);
}

TEST(Likelihood, SingleEventMultiEqualsCompeting) {
  std::mt19937_64 rng(2);
  const auto m = random_model(rng, 2, 2, 2);
  const auto b = random_batch(rng, 20, 2, 1);
  EXPECT_EQ(nll_multi(m, b), nll_competing(m, b));
}

TEST(Likelihood, TwoEventsAtDistinctTimes) {
  std::mt19937_64 rng(3);
  const auto m = random_model(rng, 2, 3, 2);
  Eigen::MatrixXd x(1, 2);
  x << 0.4, -0.9;
  Eigen::MatrixXd t(1, 2);
  t << 10, 20;
  Eigen::MatrixXi e(1, 2);
  e << 1, 1;
  const auto b = data::encode_event_free(x, t, e);
  const std::vector<double> xv{0.4, -0.9};
  const double expected = -(m.log_surv(xv, 10, 0) + m.log_pdf(xv, 10, 1) + m.log_pdf(xv, 20, 2));
  EXPECT_NEAR(nll_multi(m, b), expected, 1e-12);
}

TEST(Likelihood, StatePermutationInvariance) {
  std::mt19937_64 rng(4);
  const auto m = random_model(rng, 3, 3, 2);
  const auto b = random_batch(rng, 10, 3, 2);
  auto swapped = m;
  for (auto which : {"scale_bias", "shape_bias", "scale_proj", "shape_proj", "gate"}) {
    auto s1 = swapped.params().tensor(state_tensor_name(1, which));
    auto s2 = swapped.params().tensor(state_tensor_name(2, which));
    std::swap_ranges(s1.begin(), s1.end(), s2.begin());
  }
  auto pb = b;
  pb.times.col(1).swap(pb.times.col(2));
  pb.events.col(1).swap(pb.events.col(2));
  EXPECT_NEAR(nll_multi(swapped, pb), nll_multi(m, b), 1e-10);
}

TEST(Trajectory, MissingIndicatorContributesZero) {
  std::mt19937_64 rng(5);
  const auto m = random_model(rng, 2, 3, 1);
  const TrajectorySet T{{{1, 2}}};
  EXPECT_EQ(trajectory_likelihood(m, one_row({0.1, 0.2}, {1, 1, 2}, {0, 0, 1}), T), 0.0);
  EXPECT_EQ(trajectory_likelihood(m, one_row({0.1, 0.2}, {1, 1, 2}, {0, 1, 0}), T), 0.0);
  EXPECT_EQ(trajectory_likelihood(m, one_row({0.1, 0.2}, {3, 3, 3}, {1, 0, 0}), T), 0.0);
}

TEST(Trajectory, BothObservedGivesSurvivalOfLaterAtEarlier) {
  std::mt19937_64 rng(6);
  const auto m = random_model(rng, 2, 3, 2);
  const TrajectorySet T{{{1, 2}}};
  const std::vector<double> x{0.1, 0.2};
  const double v = trajectory_likelihood(m, one_row(x, {1.3, 1.3, 2.0}, {0, 1, 1}), T);
  EXPECT_NEAR(v, std::exp(m.log_surv(x, 1.3, 2)), 1e-15);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(Trajectory, ExponentialHeadExample) {
  const auto m = zero_model(1, 3);
  const TrajectorySet T{{{1, 2}}};
  const double v = trajectory_likelihood(m, one_row({0.0}, {0.5, 0.5, 0.9}, {0, 1, 1}), T);
  EXPECT_NEAR(v, std::exp(-0.5), 1e-15);
  EXPECT_NEAR(v, 0.6065, 1e-4);
}

TEST(Trajectory, ValidationRejectsBadSets) {
  EXPECT_THROW((TrajectorySet{{{1, 1}}}.validate(3)), ContractError);
  EXPECT_THROW((TrajectorySet{{{1, 2}, {2, 1}}}.validate(3)), ContractError);
  EXPECT_THROW((TrajectorySet{{{0, 2}}}.validate(3)), ContractError);
  EXPECT_THROW((TrajectorySet{{{1, 3}}}.validate(3)), ContractError);
  EXPECT_NO_THROW((TrajectorySet{{{1, 2}, {1, 3}}}.validate(4)));
}

TEST(TotalLoss, EmptyTrajectorySetIsScaledNll) {
  std::mt19937_64 rng(7);
  const auto m = random_model(rng, 3, 3, 2);
  const auto b = random_batch(rng, 9, 3, 2);
  EXPECT_EQ(total_loss(m, b, multi()), nll_multi(m, b) / 9.0);
}

TEST(TotalLoss, NoDoublyObservedPairsMatchesEmptySet) {
  std::mt19937_64 rng(8);
  const auto m = random_model(rng, 3, 3, 2);
  auto b = random_batch(rng, 9, 3, 2);
  b.events.col(2).setZero();
  EXPECT_EQ(total_loss(m, b, multi({{{1, 2}}})), total_loss(m, b, multi()));
}

TEST(TotalLoss, PerInstanceNormalization) {
  std::mt19937_64 rng(9);
  const auto m = random_model(rng, 3, 3, 2);
  const auto b = random_batch(rng, 1, 3, 2);
  const TrajectorySet T{{{1, 2}}};
  EXPECT_NEAR(total_loss(m, stack(b, b), multi(T)), total_loss(m, b, multi(T)), 1e-14);
}

TEST(TotalLoss, DecompositionIdentityAndBounds) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_model(rng, 3, 4, 2);
    const auto b = random_batch(rng, 1 + trial % 12, 3, 3);
    const TrajectorySet T{{{1, 2}, {3, 2}, {1, 3}}};
    const double n = static_cast<double>(b.rows());
    const double traj = trajectory_likelihood(m, b, T);
    EXPECT_GE(traj, 0.0);
    EXPECT_LE(traj, n * 3);
    EXPECT_NEAR(total_loss(m, b, multi(T)) + traj / n, total_loss(m, b, multi()), 1e-12);
  }
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_model(rng, 3, 3, 2);
    const auto b = random_batch(rng, 4, 3, 2);
    const auto opts = multi({{{1, 2}}});
    const auto lg = total_loss_gradient(m, b, opts);
    EXPECT_NEAR(lg.loss, total_loss(m, b, opts), 1e-12);
    auto values = m.params().values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x0 = values[i];
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      values[i] = x0 + h;
      const double up = total_loss(m, b, opts);
      values[i] = x0 - h;
      const double down = total_loss(m, b, opts);
      values[i] = x0;
      const double fd = (up - down) / (2 * h);
      const double a = lg.gradient[i];
      if (std::abs(a) > 1e-6) {
        EXPECT_LT(std::abs(a - fd) / std::max(std::abs(a), std::abs(fd)), 1e-4) << i;
      } else {
        EXPECT_LT(std::abs(a - fd), 1e-6) << i;
      }
    }
  }
}

TEST(TotalLoss, CompetingModeUsesFirstTransitionTime) {
  std::mt19937_64 rng(12);
  const auto m = random_model(rng, 2, 3, 1);
  const auto b = random_batch(rng, 7, 2, 2);
  EXPECT_EQ(total_loss(m, b, {Mode::Competing, {}, false}), nll_competing(m, b) / 7.0);
}

TEST(TotalLoss, NonFiniteRowIsReported) {
  auto m = zero_model(1, 2);
  m.params().tensor(state_tensor_name(1, "scale_bias"))[0] = std::nan("");
  const auto b = one_row({0.0}, {1.0, 1.0}, {0, 1});
  try {
    (void)nll_competing(m, b);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos);
  }
}

namespace {

struct SyntheticSplit {
  StateEncodedDataset train, valid;
};

SyntheticSplit synthetic(std::size_t n, std::uint64_t seed) {
  const auto dgp = sim::make_dgp(sim::RiskKind::Linear, 4, {}, seed);
  const auto ds = sim::generate_dataset(dgp, n, seed + 1).dataset;
  const auto s = data::split_stratified(ds, {0.7, 0.1, 0.2, seed});
  const auto prep = data::preprocess_fit(ds.subset(s.train));
  return {data::encode_event_free(data::preprocess_apply(prep, ds.subset(s.train))),
          data::encode_event_free(data::preprocess_apply(prep, ds.subset(s.valid)))};
}

MensaModel fresh(std::size_t d) {
  MensaConfig c;
  c.num_features = d;
  c.num_states = 2;
  c.hidden_width = 16;
  c.seed = 3;
  return init_model(c);
}

}  // namespace

TEST(Train, ZeroLearningRateChangesNothing) {
  const auto split = synthetic(300, 1);
  const auto m = fresh(4);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.mode = Mode::Single;
  const auto r = train::train(m, split.train, split.valid, tc);
  EXPECT_TRUE(r.model.params() == m.params());
  EXPECT_EQ(r.log.size(), 3u);
}

TEST(Train, ValidationLossImproves) {
  const auto split = synthetic(2000, 2);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 40;
  tc.mode = Mode::Single;
  const auto r = train::train(fresh(4), split.train, split.valid, tc);
  EXPECT_LT(r.best_valid_loss, r.initial_valid_loss);
  EXPECT_LT(total_loss(r.model, split.valid, loss_options(tc)), r.initial_valid_loss);
}

TEST(Train, SameSeedSameLog) {
  const auto split = synthetic(400, 3);
  TrainConfig tc;
  tc.epochs = 6;
  tc.seed = 17;
  tc.mode = Mode::Single;
  const auto a = train::train(fresh(4), split.train, split.valid, tc);
  const auto b = train::train(fresh(4), split.train, split.valid, tc);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].epoch, b.log[i].epoch);
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].valid_loss, b.log[i].valid_loss);
  }
  EXPECT_TRUE(a.model.params() == b.model.params());
}

TEST(Train, ReturnsBestValidationEpoch) {
  const auto split = synthetic(500, 4);
  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.epochs = 30;
  tc.patience = 3;
  tc.mode = Mode::Single;
  const auto r = train::train(fresh(4), split.train, split.valid, tc);
  ASSERT_FALSE(r.log.empty());
  EXPECT_LE(r.log.size(), 30u);
  double best = 1e300;
  for (const auto& e : r.log) best = std::min(best, e.valid_loss);
  EXPECT_EQ(r.best_valid_loss, best);
  EXPECT_EQ(total_loss(r.model, split.valid, loss_options(tc)), best);
  if (r.stopped_early) EXPECT_EQ(r.log.size(), r.best_epoch + tc.patience);
}

TEST(Train, NonFiniteDataAbortsWithDiagnostics) {
  const auto split = synthetic(200, 5);
  auto m = fresh(4);
  m.params().tensor(state_tensor_name(0, "scale_bias"))[0] = std::nan("");
  TrainConfig tc;
  tc.epochs = 2;
  tc.mode = Mode::Single;
  try {
    (void)train::train(m, split.train, split.valid, tc);
    FAIL();
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("parameter norm"), std::string::npos) << msg;
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig tc;
  tc.patience = 0;
  EXPECT_THROW(tc.validate(), ContractError);
  tc.patience = 1;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ContractError);
  tc.batch_size = 4;
  tc.mode = Mode::Competing;
  tc.trajectories.pairs.push_back({1, 2});
  EXPECT_THROW(tc.validate(), ContractError);
}
