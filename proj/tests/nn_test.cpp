#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "casreader/nn.hpp"

using namespace casreader;

namespace {

void fill(Tensor& t, Rng& rng, double bound = 0.5) {
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

GruParams random_gru(std::size_t in, std::size_t hidden, Rng& rng) {
  GruParams p = GruParams::zeros(in, hidden);
  for (auto& nt : p.named("g")) fill(*nt.tensor, rng);
  return p;
}

// Scalar-loop GRU step, independent of the tape.
std::vector<double> scalar_gru(const GruParams& p, const std::vector<double>& x,
                               const std::vector<double>& h) {
  const std::size_t hid = p.hidden_dim(), in = p.input_dim();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> z(hid), r(hid), out(hid);
  for (std::size_t i = 0; i < hid; ++i) {
    double az = p.b_z.data[i], ar = p.b_r.data[i];
    for (std::size_t j = 0; j < in; ++j) {
      az += p.w_z.at(i, j) * x[j];
      ar += p.w_r.at(i, j) * x[j];
    }
    for (std::size_t j = 0; j < hid; ++j) {
      az += p.u_z.at(i, j) * h[j];
      ar += p.u_r.at(i, j) * h[j];
    }
    z[i] = sig(az);
    r[i] = sig(ar);
  }
  for (std::size_t i = 0; i < hid; ++i) {
    double ah = p.b_h.data[i];
    for (std::size_t j = 0; j < in; ++j) ah += p.w_h.at(i, j) * x[j];
    for (std::size_t j = 0; j < hid; ++j) ah += p.u_h.at(i, j) * (r[j] * h[j]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * std::tanh(ah);
  }
  return out;
}

Tensor row_tensor(const std::vector<double>& v) { return Tensor({1, v.size()}, v); }

}  // namespace

TEST(EmbedLookup, SelectsRowsAndScatterAddsGradients) {
  Tensor table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  Tape tape;
  Var emb = tape.parameter(table);
  const std::size_t first[] = {0};
  EXPECT_EQ(embed_lookup(emb, first).value().data, (std::vector<double>{1, 2}));

  const std::size_t twice[] = {3, 3};
  Var rows = embed_lookup(emb, twice);
  EXPECT_EQ(rows.value().data, (std::vector<double>{7, 8, 7, 8}));
  tape.backward(rows, Tensor::matrix({{1, 2}, {10, 20}}));
  EXPECT_EQ(table.grad, (std::vector<double>{0, 0, 0, 0, 0, 0, 11, 22}));
}

TEST(EmbedLookup, UnselectedRowGetsExactlyZero) {
  Tensor table({5, 3}, 0.25);
  Tape tape;
  const std::size_t ids[] = {1, 4};
  tape.backward(sum(embed_lookup(tape.parameter(table), ids)));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(table.grad[2 * 3 + j], 0.0);
}

TEST(EmbedLookup, OutOfRangeIdIsIndexError) {
  Tensor table({2, 2});
  Tape tape;
  const std::size_t ids[] = {2};
  EXPECT_THROW(embed_lookup(tape.parameter(table), ids), IndexError);
}

TEST(GruCell, ZeroWeightsHalveThePreviousState) {
  GruParams p = GruParams::zeros(3, 4);
  Tape tape;
  GruVars g = GruVars::bind(tape, p);
  Var x = tape.constant(row_tensor({0.3, -2.0, 5.0}));
  Var h = tape.constant(row_tensor({0.8, -0.4, 0.1, 1.0}));
  const auto& out = gru_cell(x, h, g).value().data;
  EXPECT_EQ(out, (std::vector<double>{0.4, -0.2, 0.05, 0.5}));
  Var zero = tape.constant(Tensor({1, 4}));
  for (double v : gru_cell(x, zero, g).value().data) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, FixedPointWithZeroInputWeights) {
  Rng rng(4);
  GruParams p = random_gru(3, 5, rng);
  p.w_z = p.w_r = p.w_h = Tensor({5, 3});
  p.b_z = p.b_r = p.b_h = Tensor({5});
  Tape tape;
  GruVars g = GruVars::bind(tape, p);
  Var out = gru_cell(tape.constant(row_tensor({1, 2, 3})), tape.constant(Tensor({1, 5})), g);
  for (double v : out.value().data) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, MatchesScalarLoopOracle) {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    GruParams p = random_gru(4, 4, rng);
    std::vector<double> x(4), h(4);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : h) v = rng.uniform(-1, 1);
    Tape tape;
    GruVars g = GruVars::bind(tape, p);
    const auto got = gru_cell(tape.constant(row_tensor(x)), tape.constant(row_tensor(h)), g).value().data;
    const auto expected = scalar_gru(p, x, h);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(got[i], expected[i], 1e-12);
      EXPECT_GT(got[i], -1.0);
      EXPECT_LT(got[i], 1.0);
    }
  }
}

TEST(GruCell, DimensionMismatch) {
  GruParams p = GruParams::zeros(3, 4);
  Tape tape;
  GruVars g = GruVars::bind(tape, p);
  EXPECT_THROW(gru_cell(tape.constant(Tensor({1, 2})), tape.constant(Tensor({1, 4})), g), DimensionError);
  EXPECT_THROW(gru_cell(tape.constant(Tensor({1, 3})), tape.constant(Tensor({1, 5})), g), DimensionError);
}

TEST(GruCell, SingleStepGradCheck) {
  Rng rng(17);
  GruParams p = random_gru(3, 4, rng);
  Tensor x({1, 3}), h({1, 4});
  fill(x, rng, 1.0);
  fill(h, rng, 1.0);
  std::vector<Tensor*> params;
  for (auto& nt : p.named("g")) params.push_back(nt.tensor);
  params.push_back(&x);
  params.push_back(&h);
  const double err = grad_check(
      [&](Tape& tape) {
        GruVars g = GruVars::bind(tape, p);
        Var out = gru_cell(tape.parameter(x), tape.parameter(h), g);
        return sum(mul(out, out));
      },
      params);
  EXPECT_LT(err, 1e-6);
}

TEST(GruCell, ThreeStepGradCheck) {
  Rng rng(18);
  GruParams p = random_gru(2, 3, rng);
  Tensor xs({3, 2});
  fill(xs, rng, 1.0);
  std::vector<Tensor*> params;
  for (auto& nt : p.named("g")) params.push_back(nt.tensor);
  params.push_back(&xs);
  const double err = grad_check(
      [&](Tape& tape) {
        GruVars g = GruVars::bind(tape, p);
        Var inputs = tape.parameter(xs);
        Var h = tape.constant(Tensor({1, 3}));
        for (std::size_t t = 0; t < 3; ++t) h = gru_cell(row(inputs, t), h, g);
        return sum(tanh(h));
      },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(BiGru, SingleStepIsConcatenationOfCells) {
  Rng rng(21);
  GruParams fwd = random_gru(3, 2, rng), bwd = random_gru(3, 2, rng);
  Tape tape;
  GruVars f = GruVars::bind(tape, fwd), b = GruVars::bind(tape, bwd);
  Var x = tape.constant(row_tensor({0.1, 0.2, -0.3}));
  Var zero = tape.constant(Tensor({1, 2}));
  EncodedSequence enc = bigru_encode(x, f, b, {true});
  const auto& fo = gru_cell(x, zero, f).value().data;
  const auto& bo = gru_cell(x, zero, b).value().data;
  EXPECT_EQ(enc.states.value().data, (std::vector<double>{fo[0], fo[1], bo[0], bo[1]}));
}

TEST(BiGru, PalindromeSymmetry) {
  Rng rng(22);
  GruParams p = random_gru(2, 3, rng);
  Tensor seq = Tensor::matrix({{0.1, 0.5}, {-0.7, 0.2}, {0.9, -0.4}, {-0.7, 0.2}, {0.1, 0.5}});
  Tape tape;
  GruVars g = GruVars::bind(tape, p);
  const Tensor& out = bigru_encode(tape.constant(seq), g, g, std::vector<bool>(5, true)).states.value();
  ASSERT_EQ(out.cols(), 6u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out.at(i, k), out.at(4 - i, 3 + k), 1e-12);
}

TEST(BiGru, PaddingLeavesUnmaskedRowsBitIdentical) {
  Rng rng(23);
  GruParams fwd = random_gru(2, 3, rng), bwd = random_gru(2, 3, rng);
  Tensor seq = Tensor::matrix({{0.1, 0.5}, {-0.7, 0.2}, {0.9, -0.4}});
  Tensor padded = Tensor::matrix({{0.1, 0.5}, {-0.7, 0.2}, {0.9, -0.4}, {0.33, 0.44}});
  Tensor left_padded = Tensor::matrix({{0.33, 0.44}, {0.1, 0.5}, {-0.7, 0.2}, {0.9, -0.4}});
  Tape tape;
  GruVars f = GruVars::bind(tape, fwd), b = GruVars::bind(tape, bwd);
  const Tensor plain = bigru_encode(tape.constant(seq), f, b, {true, true, true}).states.value();
  const Tensor right = bigru_encode(tape.constant(padded), f, b, {true, true, true, false}).states.value();
  const Tensor left = bigru_encode(tape.constant(left_padded), f, b, {false, true, true, true}).states.value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_EQ(plain.at(i, k), right.at(i, k));
      EXPECT_EQ(plain.at(i, k), left.at(i + 1, k));
    }
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(right.at(3, k), 0.0);
    EXPECT_EQ(left.at(0, k), 0.0);
  }
}

TEST(BiGru, EmptyOrFullyMaskedIsUsageError) {
  GruParams p = GruParams::zeros(2, 2);
  Tape tape;
  GruVars g = GruVars::bind(tape, p);
  EXPECT_THROW(bigru_encode(tape.constant(Tensor({1, 2})), g, g, {}), UsageError);
  EXPECT_THROW(bigru_encode(tape.constant(Tensor({2, 2})), g, g, {false, false}), UsageError);
}

TEST(OrthogonalInit, SquareMatrixIsOrthogonal) {
  for (std::size_t n : {1u, 4u, 16u, 64u}) {
    Rng rng(n);
    Tensor m = orthogonal_init(n, n, rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += m.at(k, i) * m.at(k, j);
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-10);
      }
  }
}

TEST(OrthogonalInit, RectangularShapesHaveOrthonormalShortSide) {
  Rng rng(8);
  Tensor tall = orthogonal_init(6, 3, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 6; ++k) dot += tall.at(k, i) * tall.at(k, j);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-10);
    }
  Tensor wide = orthogonal_init(2, 5, rng);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 5; ++k) dot += wide.at(i, k) * wide.at(j, k);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-10);
    }
}

TEST(OrthogonalInit, DeterministicGivenSeed) {
  Rng a(42), b(42);
  EXPECT_EQ(orthogonal_init(4, 4, a), orthogonal_init(4, 4, b));
}

TEST(OrthogonalInit, UsedForRecurrentWeightsOnly) {
  Rng rng(1);
  GruParams p = GruParams::init(5, 4, rng);
  for (const Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) {
    for (std::size_t i = 0; i < 4; ++i) {
      double norm = 0.0;
      for (std::size_t k = 0; k < 4; ++k) norm += u->at(k, i) * u->at(k, i);
      EXPECT_NEAR(norm, 1.0, 1e-10);
    }
  }
  for (const Tensor* w : {&p.w_z, &p.w_r, &p.w_h})
    for (double v : w->data) EXPECT_LE(std::abs(v), 0.1);
  for (const Tensor* b : {&p.b_z, &p.b_r, &p.b_h})
    for (double v : b->data) EXPECT_EQ(v, 0.0);
}

TEST(UniformInit, BoundsDeterminismAndMean) {
  Rng rng(3);
  Tensor m = uniform_init(100, 100, 0.1, rng);
  double total = 0.0;
  for (double v : m.data) {
    EXPECT_GE(v, -0.1);
    EXPECT_LE(v, 0.1);
    total += v;
  }
  EXPECT_LT(std::abs(total / 10000.0), 0.01);
  Rng a(9), b(9);
  EXPECT_EQ(uniform_init(3, 7, 0.1, a), uniform_init(3, 7, 0.1, b));
  EXPECT_THROW(uniform_init(2, 2, 0.0, a), ConfigError);
}

TEST(Dropout, IdentityCases) {
  Rng rng(1);
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1, 2, 3}}));
  EXPECT_EQ(dropout(x, 0.0, true, rng).id(), x.id());
  EXPECT_EQ(dropout(x, 0.0, false, rng).id(), x.id());
  EXPECT_EQ(dropout(x, 0.5, false, rng).id(), x.id());
}

TEST(Dropout, RateAtLeastOneIsConfigError) {
  Rng rng(1);
  Tape tape;
  Var x = tape.constant(Tensor({2}));
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ConfigError);
}

TEST(Dropout, ZeroFractionAndScaling) {
  Rng rng(77);
  Tape tape;
  Tensor big({100, 100});
  for (std::size_t i = 0; i < big.size(); ++i) big.data[i] = 1.0 + static_cast<double>(i % 7);
  const Tensor& out = dropout(tape.constant(big), 0.1, true, rng).value();
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.data[i] == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(out.data[i], big.data[i] / 0.9);
    }
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.1, 0.02);
}

TEST(Dropout, InvertedExpectationMatchesInput) {
  Rng rng(78);
  Tensor x = Tensor::vector({0.5, -1.0, 2.0, 0.25});
  std::vector<double> mean(4, 0.0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Tape tape;
    const Tensor& y = dropout(tape.constant(x), 0.1, true, rng).value();
    for (std::size_t i = 0; i < 4; ++i) mean[i] += y.data[i] / draws;
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mean[i], x.data[i], 0.02 * std::abs(x.data[i]));
}
