#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mensa/autodiff.hpp"
#include "mensa/error.hpp"

using namespace mensa;
using namespace mensa::ad;

namespace {

// Central differences through Graph::forward, so the oracle never touches
// the reverse sweep.
std::vector<double> fd_gradient(Graph& g, Var out, std::vector<double> leaves, double h = 1e-6) {
  std::vector<double> grad(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const double x0 = leaves[i];
    leaves[i] = x0 + h;
    g.forward(leaves);
    const double up = out.value();
    leaves[i] = x0 - h;
    g.forward(leaves);
    const double down = out.value();
    leaves[i] = x0;
    grad[i] = (up - down) / (2 * h);
  }
  g.forward(leaves);
  return grad;
}

void expect_grad_close(const std::vector<double>& analytic, const std::vector<double>& numeric,
                       double rel = 1e-5, double abs_tol = 1e-8) {
  ASSERT_EQ(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    if (std::abs(a) > 1e-8) {
      EXPECT_LT(std::abs(a - n) / std::max(std::abs(a), std::abs(n)), rel) << "leaf " << i;
    } else {
      EXPECT_LT(std::abs(a - n), abs_tol) << "leaf " << i;
    }
  }
}

using Unary = std::function<Var(Graph&, Var)>;

void check_unary(const Unary& f, std::initializer_list<double> points) {
  for (double x : points) {
    Graph g;
    Var a = g.leaf(x);
    Var y = f(g, a);
    expect_grad_close(g.leaf_gradient(y), fd_gradient(g, y, {x}));
  }
}

}  // namespace

TEST(Autodiff, Relu6ClampsAtSix) {
  Graph g;
  EXPECT_DOUBLE_EQ(relu6(g.leaf(7.0)).value(), 6.0);
  EXPECT_DOUBLE_EQ(relu6(g.leaf(-1.0)).value(), 0.0);
  EXPECT_DOUBLE_EQ(relu6(g.leaf(2.5)).value(), 2.5);
  EXPECT_DOUBLE_EQ(relu6(7.0), 6.0);
}

TEST(Autodiff, SeluFixedPointAtZero) {
  Graph g;
  EXPECT_EQ(selu(g.leaf(0.0)).value(), 0.0);
  EXPECT_EQ(selu(0.0), 0.0);
  EXPECT_NEAR(selu(1.0), kSeluLambda, 1e-15);
  EXPECT_NEAR(selu(-1.0), kSeluLambda * kSeluAlpha * (std::exp(-1.0) - 1.0), 1e-15);
}

TEST(Autodiff, SoftmaxOfEqualLogitsIsUniform) {
  Graph g;
  std::vector<Var> logits{g.leaf(2.0), g.leaf(2.0), g.leaf(2.0)};
  for (Var p : softmax(logits)) EXPECT_NEAR(p.value(), 1.0 / 3.0, 1e-15);
  const std::vector<double> d{5.0, 5.0, 5.0};
  for (double p : softmax(d)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Autodiff, ProductRule) {
  Graph g;
  Var x = g.leaf(3.0);
  Var y = g.leaf(5.0);
  Var z = x * y;
  const auto grads = g.backward(z);
  EXPECT_DOUBLE_EQ(grads[x], 5.0);
  EXPECT_DOUBLE_EQ(grads[y], 3.0);
}

TEST(Autodiff, ExpDerivativeAtZero) {
  Graph g;
  Var x = g.leaf(0.0);
  EXPECT_DOUBLE_EQ(g.backward(exp(x))[x], 1.0);
}

TEST(Autodiff, PrimitiveGradientsMatchFiniteDifferences) {
  check_unary([](Graph&, Var a) { return exp(a); }, {-2.0, 0.3, 1.7});
  check_unary([](Graph&, Var a) { return log(a); }, {0.2, 1.0, 9.0});
  check_unary([](Graph&, Var a) { return pow(a, 2.5); }, {0.4, 1.3});
  check_unary([](Graph&, Var a) { return pow(a, a); }, {0.7, 2.1});
  check_unary([](Graph&, Var a) { return relu6(a); }, {-1.0, 0.5, 3.0, 7.5});
  check_unary([](Graph&, Var a) { return selu(a); }, {-2.0, -0.3, 0.4, 2.0});
  check_unary([](Graph&, Var a) { return clamp_max(a, 1.0); }, {0.3, 2.0});
  check_unary([](Graph&, Var a) { return -a; }, {1.5});
  check_unary([](Graph&, Var a) { return 3.0 / (a + 2.0); }, {0.5, -0.7});
  check_unary([](Graph&, Var a) { return 4.0 - a * 0.25; }, {1.0});
  check_unary([](Graph& g, Var a) { return g.dropout(a, true, 0.8); }, {1.2});
  check_unary([](Graph& g, Var a) { return g.dropout(a, false, 0.8); }, {1.2});
  check_unary(
      [](Graph& g, Var a) {
        std::vector<Var> xs{a, a * 2.0, g.constant(0.5)};
        return log_sum_exp(xs);
      },
      {-3.0, 0.0, 2.0});
  check_unary(
      [](Graph&, Var a) {
        std::vector<Var> xs{a, a * a, exp(a)};
        return log_softmax(xs)[1];
      },
      {-0.5, 1.1});
  check_unary(
      [](Graph&, Var a) {
        std::vector<Var> xs{a, a * a, exp(a)};
        const std::vector<double> c{0.3, -1.2, 2.0};
        return dot(xs, c) + sum(xs);
      },
      {0.8});
}

TEST(Autodiff, DropoutScalesByKeepProbability) {
  Graph g;
  Var a = g.leaf(2.0);
  EXPECT_DOUBLE_EQ(g.dropout(a, true, 0.5).value(), 4.0);
  EXPECT_DOUBLE_EQ(g.dropout(a, false, 0.5).value(), 0.0);
}

TEST(Autodiff, RandomCompositeGraphsMatchFiniteDifferences) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> leaf_value(0.5, 1.5);
  std::uniform_int_distribution<int> pick_op(0, 7);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    std::vector<double> values(4);
    std::vector<Var> layer;
    for (auto& v : values) {
      v = leaf_value(rng);
      layer.push_back(g.leaf(v));
    }
    for (int depth = 0; depth < 3; ++depth) {
      std::uniform_int_distribution<std::size_t> pick(0, layer.size() - 1);
      std::vector<Var> next;
      for (int k = 0; k < 4; ++k) {
        Var a = layer[pick(rng)];
        Var b = layer[pick(rng)];
        switch (pick_op(rng)) {
          case 0: next.push_back(a + b); break;
          case 1: next.push_back(a * b * 0.5); break;
          case 2: next.push_back(a - b); break;
          case 3: next.push_back(a / (exp(b) + 1.0)); break;
          case 4: next.push_back(log(exp(a) + 1.0)); break;
          case 5: next.push_back(selu(a - b)); break;
          case 6: next.push_back(pow(exp(a * 0.3), 1.7)); break;
          default: {
            std::vector<Var> xs{a, b};
            next.push_back(log_sum_exp(xs));
          }
        }
      }
      layer = std::move(next);
    }
    const std::vector<double> w{0.7, -0.4, 1.1, 0.2};
    Var out = dot(layer, w) + log_sum_exp(layer);
    expect_grad_close(g.leaf_gradient(out), fd_gradient(g, out, values));
  }
}

TEST(Autodiff, BackwardTwiceIsBitwiseIdentical) {
  Graph g;
  Var x = g.leaf(0.3);
  Var y = g.leaf(-1.2);
  std::vector<Var> xs{x * y, exp(x), selu(y)};
  Var out = log_sum_exp(xs);
  g.forward();
  const auto a = g.leaf_gradient(out);
  const auto b = g.leaf_gradient(out);
  EXPECT_EQ(a, b);
}

TEST(Autodiff, ForwardReevaluatesWithNewLeaves) {
  Graph g;
  Var x = g.leaf(1.0);
  Var y = exp(x) * 2.0;
  const std::vector<double> v{0.0};
  g.forward(v);
  EXPECT_DOUBLE_EQ(y.value(), 2.0);
}

TEST(Autodiff, SoftmaxSumsToOne) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(1 + trial % 9);
    for (auto& l : logits) l = n(rng);
    double s = 0.0;
    for (double p : softmax(logits)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
    Graph g;
    std::vector<Var> vars;
    for (double l : logits) vars.push_back(g.leaf(l));
    double sv = 0.0;
    for (Var p : softmax(vars)) sv += p.value();
    EXPECT_NEAR(sv, 1.0, 1e-12);
  }
}

TEST(Autodiff, DomainErrorsNameTheNode) {
  Graph g;
  Var neg = g.leaf(-1.0);
  EXPECT_THROW(log(neg), DomainError);
  EXPECT_THROW(pow(neg, 0.5), DomainError);
  EXPECT_THROW(pow(neg, g.leaf(2.0)), DomainError);
  EXPECT_THROW(g.leaf(1.0) / g.leaf(0.0), DomainError);
  try {
    (void)log(g.leaf(0.0));
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
}

TEST(Autodiff, ForeignVariableIsAContractError) {
  Graph a;
  Graph b;
  Var x = a.leaf(1.0);
  EXPECT_THROW(b.backward(x), ContractError);
  EXPECT_THROW(b.exp(x), ContractError);
  EXPECT_THROW(a.backward(Var{}), ContractError);
}

TEST(Autodiff, DoubleOverloadsAgreeWithGraph) {
  const std::vector<double> xs{0.1, -2.0, 3.5};
  Graph g;
  std::vector<Var> vs;
  for (double x : xs) vs.push_back(g.leaf(x));
  EXPECT_DOUBLE_EQ(log_sum_exp(vs).value(), log_sum_exp(xs));
  const auto a = log_softmax(vs);
  const auto b = log_softmax(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(a[i].value(), b[i], 1e-15);
  EXPECT_NEAR(log_sum_exp(xs), std::log(std::exp(0.1) + std::exp(-2.0) + std::exp(3.5)), 1e-14);
}
