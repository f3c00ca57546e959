#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "onn/backprop.hpp"
#include "onn/error.hpp"
#include "oracles.hpp"

using namespace onn;

namespace {

OnnModel random_model(const Architecture& arch, std::uint64_t seed, double range = 0.3) {
  OnnModel m = make_model(arch);
  std::mt19937_64 rng(seed);
  init_weights(m, rng, range);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (std::size_t l = 1; l < m.params.biases.size(); ++l)
    for (double& b : m.params.biases[l]) b = u(rng);
  return m;
}

GradientSet analytic(const OnnModel& m, const FeatureMap& x, const FeatureMap& t) {
  const auto tr = forward(m, x);
  return backward(m, tr, output_delta(m, tr, {t})).grads;
}

double loss_of(const OnnModel& m, const FeatureMap& x, const FeatureMap& t) {
  return mse(forward(m, x).output(), t);
}

// Median routes of a trace, flattened; a route change under the finite
// difference step marks a non-differentiable point.
std::vector<std::uint8_t> routes_of(const ForwardTrace& tr) {
  std::vector<std::uint8_t> all;
  for (const auto& lt : tr.layers)
    for (const auto& r : lt.routes) all.insert(all.end(), r.begin(), r.end());
  return all;
}

double rel_err(double a, double b, double floor) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace

TEST(Mse, Examples) {
  const FeatureMap t(3, 3, 0.25);
  EXPECT_EQ(mse(t, t), 0.0);
  EXPECT_DOUBLE_EQ(mse(FeatureMap(3, 3, 1.25), t), 1.0);
  EXPECT_DOUBLE_EQ(mse(FeatureMap(2, 1, 0.0), FeatureMap(2, 1, std::vector<double>{1, -1})), 1.0);
  EXPECT_THROW(mse(FeatureMap(2, 2), FeatureMap(2, 3)), Error);
}

TEST(OutputDelta, ZeroWhenOutputMatchesTarget) {
  const OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 1);
  std::mt19937_64 rng(2);
  const auto tr = forward(m, oracle::random_map(4, 4, rng));
  const auto d = output_delta(m, tr, {tr.output()});
  EXPECT_EQ(d[0], FeatureMap(4, 4, 0.0));
}

TEST(OutputDelta, SignFollowsError) {
  const OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 3);
  std::mt19937_64 rng(4);
  const auto tr = forward(m, oracle::random_map(4, 4, rng));
  const FeatureMap t = oracle::random_map(4, 4, rng, -0.5, 0.5);
  const auto d = output_delta(m, tr, {t});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double e = tr.output().values[i] - t.values[i];
    EXPECT_EQ(std::signbit(d[0].values[i]), std::signbit(e));
  }
}

// dE/dx_out by central differences on the pre-activation of a 4x4 output.
TEST(OutputDelta, MatchesFiniteDifference) {
  const OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 5);
  std::mt19937_64 rng(6);
  const auto tr = forward(m, oracle::random_map(4, 4, rng));
  const FeatureMap t = oracle::random_map(4, 4, rng, -0.5, 0.5);
  const auto d = output_delta(m, tr, {t});
  const FeatureMap& x = tr.layers.back().pre[0];
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    FeatureMap up(4, 4), dn(4, 4);
    for (std::size_t j = 0; j < x.size(); ++j) {
      up.values[j] = std::tanh(x.values[j] + (j == i ? h : 0.0));
      dn.values[j] = std::tanh(x.values[j] - (j == i ? h : 0.0));
    }
    const double fd = (mse(up, t) - mse(dn, t)) / (2 * h);
    EXPECT_LE(rel_err(d[0].values[i], fd, 1e-9), 1e-6) << i;
  }
}

TEST(Backward, CnnOracle) {
  const OnnModel m = random_model(Architecture::standard(1, 4, 4, 1), 7);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const FeatureMap x = oracle::random_map(16, 16, rng);
    const FeatureMap t = oracle::random_map(16, 16, rng, -0.8, 0.8);
    const auto ref = oracle::cnn(m, x, t);
    EXPECT_LE(std::fabs(ref.loss - loss_of(m, x, t)), 1e-12);
    const GradientSet g = analytic(m, x, t);
    for (std::size_t l = 1; l < g.kernels.size(); ++l) {
      for (std::size_t j = 0; j < g.kernels[l].size(); ++j)
        for (std::size_t q = 0; q < 9; ++q)
          EXPECT_NEAR(g.kernels[l][j].weights[q], ref.grads.kernels[l][j].weights[q], 1e-9);
      for (std::size_t k = 0; k < g.biases[l].size(); ++k)
        EXPECT_NEAR(g.biases[l][k], ref.grads.biases[l][k], 1e-9);
    }
  }
}

// Core property: for every operator set, analytic sensitivities agree with
// central differences of the loss on 8x8 random instances. Relative error
// uses a denominator floor of 1e-5 so gradients that are zero up to rounding
// are compared in absolute terms; median parameters whose perturbation flips
// an argmedian route are skipped as non-differentiable.
TEST(Backward, FiniteDifferenceAllSets) {
  const double h = 1e-6, tol = 1e-4, floor = 1e-5;
  const auto lib = full_library();
  for (int s = 0; s < kSetCount; ++s) {
    OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 1000 + static_cast<std::uint64_t>(s));
    for (int l : m.arch.hidden_layers()) assign_operators(m, l, std::vector<int>(3, s), lib);
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(s));
    const FeatureMap x = oracle::random_map(8, 8, rng);
    const FeatureMap t = oracle::random_map(8, 8, rng, -0.8, 0.8);
    const GradientSet g = analytic(m, x, t);
    const auto base_routes = routes_of(forward(m, x));

    int checked = 0, skipped = 0;
    const auto probe = [&](double& p, double analytic_value, const char* what) {
      const double p0 = p;
      p = p0 + h;
      const auto up_tr = forward(m, x);
      p = p0 - h;
      const auto dn_tr = forward(m, x);
      p = p0;
      if (routes_of(up_tr) != base_routes || routes_of(dn_tr) != base_routes) {
        ++skipped;
        return;
      }
      const double fd = (mse(up_tr.output(), t) - mse(dn_tr.output(), t)) / (2 * h);
      EXPECT_LE(rel_err(analytic_value, fd, floor), tol)
          << "set " << s << ' ' << what << " analytic " << analytic_value << " fd " << fd;
      ++checked;
    };
    for (std::size_t l = 1; l < m.params.kernels.size(); ++l) {
      for (std::size_t j = 0; j < m.params.kernels[l].size(); ++j)
        for (std::size_t q = 0; q < 9; ++q)
          probe(m.params.kernels[l][j].weights[q], g.kernels[l][j].weights[q], "weight");
      for (std::size_t k = 0; k < m.params.biases[l].size(); ++k) probe(m.params.biases[l][k], g.biases[l][k], "bias");
    }
    EXPECT_GT(checked, 10 * std::max(skipped, 1)) << "set " << s;
  }
}

TEST(Backward, ZeroDeltaGivesZeroGradients) {
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 9);
  assign_operators(m, 1, {3, 17, 26}, full_library());
  std::mt19937_64 rng(10);
  const auto tr = forward(m, oracle::random_map(8, 8, rng));
  const auto res = backward(m, tr, {FeatureMap(8, 8, 0.0)});
  EXPECT_EQ(res.grads, zeros_like(m));
}

TEST(Backward, StaleTraceRejected) {
  const OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 11);
  const OnnModel other = random_model(Architecture::standard(1, 4, 3, 1), 11);
  std::mt19937_64 rng(12);
  const auto tr = forward(other, oracle::random_map(8, 8, rng));
  EXPECT_THROW(backward(m, tr, {FeatureMap(8, 8, 0.0)}), Error);
}

TEST(SgdStep, Examples) {
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 13);
  const OnnModel m0 = m;
  GradientSet g = zeros_like(m);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& layer : g.kernels)
    for (auto& k : layer)
      for (double& w : k.weights) w = u(rng);

  sgd_step(m, g, 0.0);
  EXPECT_EQ(m, m0);

  m.params.kernels[1][0].weights[0] = 1.0;
  g.kernels[1][0].weights[0] = 2.0;
  sgd_step(m, g, 0.1);
  EXPECT_DOUBLE_EQ(m.params.kernels[1][0].weights[0], 0.8);

  OnnModel r = m0;
  sgd_step(r, g, 0.25);
  sgd_step(r, g, -0.25);
  for (std::size_t l = 1; l < r.params.kernels.size(); ++l)
    for (std::size_t j = 0; j < r.params.kernels[l].size(); ++j)
      for (std::size_t q = 0; q < 9; ++q)
        EXPECT_NEAR(r.params.kernels[l][j].weights[q], m0.params.kernels[l][j].weights[q], 1e-15);
}

TEST(SgdStep, NonFiniteGradientAbortsWithoutUpdate) {
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 15);
  const OnnModel m0 = m;
  GradientSet g = zeros_like(m);
  g.kernels[1][0].weights[0] = 1.0;
  g.biases[2][1] = std::nan("");
  try {
    sgd_step(m, g, 0.1, 17);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 17);
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
  }
  EXPECT_EQ(m, m0);
}

TEST(AdaptLr, Examples) {
  EXPECT_DOUBLE_EQ(adapt_lr(1.0, 2.0, 0.1), 0.105);
  EXPECT_DOUBLE_EQ(adapt_lr(2.0, 1.0, 0.1), 0.07);
  EXPECT_EQ(adapt_lr(1.0, 2.0, 0.49), 0.49);
  EXPECT_EQ(adapt_lr(2.0, 1.0, 6e-5), 6e-5);
  EXPECT_DOUBLE_EQ(adapt_lr(1.0, 1.0, 0.1), 0.07);
}

// Property: any loss sequence keeps the rate within [3.5e-5, 0.5].
TEST(AdaptLr, BoundsProperty) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> start(5e-5, 0.5);
  std::bernoulli_distribution coin(0.5);
  for (int seq = 0; seq < 200; ++seq) {
    double lr = start(rng);
    double prev = 1.0;
    for (int t = 0; t < 500; ++t) {
      const double now = coin(rng) ? prev * 0.9 : prev * 1.1;
      lr = adapt_lr(now, prev, lr);
      prev = now;
      ASSERT_LE(lr, 0.5);
      ASSERT_GE(lr, 3.5e-5);
    }
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.alpha, 1.05);
  EXPECT_EQ(c.beta, 0.7);
  EXPECT_EQ(c.lr_max, 0.5);
  EXPECT_EQ(c.lr_min, 5e-5);
  c.alpha = 0.9;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr0 = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr0 = 1e-5;
  EXPECT_THROW(c.validate(), Error);
}

namespace {

// Target = tanh of a fixed 3x3 correlation of the input: learnable by the
// all-sets-0 model.
ImagePair learnable_pair(std::mt19937_64& rng) {
  ImagePair p;
  p.id = "p";
  p.input = oracle::random_map(16, 16, rng);
  Kernel k(3, 3, 0.0);
  k.at(0, 1) = 0.6;
  k.at(1, 1) = -0.4;
  k.at(2, 2) = 0.3;
  const auto g = oracle::conv_same(oracle::from_map(p.input), k);
  p.target = FeatureMap(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) p.target.at(r, c) = std::tanh(g[r][c]);
  return p;
}

}  // namespace

TEST(Train, ZeroIterationsLeavesModel) {
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 17);
  const OnnModel m0 = m;
  std::mt19937_64 rng(18);
  const std::vector<ImagePair> pairs{learnable_pair(rng)};
  TrainConfig cfg;
  cfg.iterations = 0;
  const LossTrace tr = train(m, pairs, cfg);
  EXPECT_TRUE(tr.records.empty());
  EXPECT_EQ(m, m0);
}

TEST(Train, LearnableTaskImprovesInMostSeeds) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(500 + seed);
    OnnModel m = make_model(Architecture::standard());
    init_weights(m, rng, 0.1);
    const std::vector<ImagePair> pairs{learnable_pair(rng)};
    TrainConfig cfg;
    cfg.iterations = 240;
    cfg.seed = seed;
    const LossTrace tr = train(m, pairs, cfg);
    ASSERT_EQ(tr.records.size(), 240u);
    const double e_end = loss_of(m, pairs[0].input, pairs[0].target);
    if (e_end < tr.records.front().loss) ++improved;
    for (const auto& r : tr.records) {
      EXPECT_TRUE(std::isfinite(r.loss));
      EXPECT_GE(r.loss, 0.0);
    }
  }
  EXPECT_GE(improved, 9);
}

TEST(Train, DeterministicGivenSeed) {
  std::mt19937_64 rng(19);
  std::vector<ImagePair> pairs{learnable_pair(rng), learnable_pair(rng), learnable_pair(rng)};
  OnnModel a = random_model(Architecture::standard(1, 3, 3, 1), 20);
  assign_operators(a, 1, {2, 16, 24}, full_library());
  OnnModel b = a;
  TrainConfig cfg;
  cfg.iterations = 15;
  cfg.batch = 2;
  cfg.seed = 77;
  const LossTrace ta = train(a, pairs, cfg);
  const LossTrace tb = train(b, pairs, cfg);
  ASSERT_EQ(ta.records.size(), tb.records.size());
  for (std::size_t i = 0; i < ta.records.size(); ++i) {
    EXPECT_EQ(ta.records[i].loss, tb.records[i].loss);
    EXPECT_EQ(ta.records[i].lr, tb.records[i].lr);
  }
  EXPECT_EQ(a, b);
}

TEST(Train, FirstUpdateUsesLr0AndScheduleFollowsLoss) {
  std::mt19937_64 rng(21);
  const std::vector<ImagePair> pairs{learnable_pair(rng)};
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 22, 0.1);
  TrainConfig cfg;
  cfg.iterations = 20;
  const LossTrace tr = train(m, pairs, cfg);
  EXPECT_EQ(tr.records[0].lr, cfg.lr0);
  for (std::size_t i = 1; i < tr.records.size(); ++i) {
    const auto& r = tr.records[i];
    EXPECT_EQ(r.iter, static_cast<long>(i));
    EXPECT_EQ(r.lr, adapt_lr(r.loss, tr.records[i - 1].loss, tr.records[i - 1].lr, cfg));
  }
}

TEST(Train, BatchGradientIsMeanOfPairGradients) {
  std::mt19937_64 rng(23);
  const std::vector<ImagePair> pairs{learnable_pair(rng), learnable_pair(rng)};
  const OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 24);
  const std::vector<std::size_t> both{0, 1};
  const BatchResult br = batch_gradient(m, pairs, both);
  const GradientSet g0 = analytic(m, pairs[0].input, pairs[0].target);
  const GradientSet g1 = analytic(m, pairs[1].input, pairs[1].target);
  EXPECT_NEAR(br.loss, 0.5 * (loss_of(m, pairs[0].input, pairs[0].target) + loss_of(m, pairs[1].input, pairs[1].target)), 1e-15);
  for (std::size_t l = 1; l < br.grads.kernels.size(); ++l)
    for (std::size_t j = 0; j < br.grads.kernels[l].size(); ++j)
      for (std::size_t q = 0; q < 9; ++q)
        EXPECT_NEAR(br.grads.kernels[l][j].weights[q],
                    0.5 * (g0.kernels[l][j].weights[q] + g1.kernels[l][j].weights[q]), 1e-14);
}

TEST(Train, DivergenceReportsIteration) {
  std::mt19937_64 rng(25);
  std::vector<ImagePair> pairs{learnable_pair(rng)};
  pairs[0].target.values[3] = std::numeric_limits<double>::infinity();
  OnnModel m = random_model(Architecture::standard(1, 3, 3, 1), 26);
  TrainConfig cfg;
  cfg.iterations = 5;
  try {
    train(m, pairs, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}

TEST(LossCsv, HeaderAndRows) {
  LossTrace t;
  t.records.push_back({0, 0.5, 0.01, std::nullopt, std::nullopt});
  t.records.push_back({1, 0.25, 0.015625, std::nullopt, std::nullopt});
  std::ostringstream os;
  write_csv(os, t);
  EXPECT_EQ(os.str(), "iter,E,lr\n0,0.5,0.01\n1,0.25,0.015625\n");

  t.records[1].snr_train = 3.5;
  t.records[1].snr_test = std::numeric_limits<double>::infinity();
  std::ostringstream os2;
  write_csv(os2, t);
  EXPECT_EQ(os2.str(), "iter,E,lr,snr_train,snr_test\n0,0.5,0.01,,\n1,0.25,0.015625,3.5,inf\n");
}
