#include <gtest/gtest.h>

#include <cmath>

#include "lsnpc/graph.hpp"
#include "lsnpc/nn.hpp"
#include "lsnpc/rng.hpp"
#include "oracles.hpp"

using namespace lsnpc;

namespace {

double eval_scalar(Graph& g, Var out, const Bindings& b = {}) {
  g.set_output(out);
  return g.eval(b).value.item();
}

ParameterPtr random_param(const std::string& name, std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(Shape{r, c});
  fill_normal(rng, t.data());
  return std::make_shared<Parameter>(name, t);
}

}  // namespace

TEST(Graph, ForwardScalars) {
  Graph g;
  Var x = g.input("x");
  EXPECT_DOUBLE_EQ(eval_scalar(g, x * x, {{"x", Tensor::scalar(3)}}), 9.0);
  Graph g2;
  EXPECT_DOUBLE_EQ(eval_scalar(g2, sigmoid(g2.input("x")), {{"x", Tensor::scalar(0)}}), 0.5);
  Graph g3;
  EXPECT_NEAR(eval_scalar(g3, softplus(g3.input("x")), {{"x", Tensor::scalar(0)}}), std::log1p(std::exp(0.0)), 1e-15);
  EXPECT_NEAR(std::log(2.0), 0.693147, 1e-6);
}

TEST(Graph, SquareDerivative) {
  auto p = std::make_shared<Parameter>("x", Tensor::scalar(3));
  Graph g;
  g.set_output(square(g.param(p)));
  g.eval({});
  g.backward();
  EXPECT_DOUBLE_EQ(p->grad.item(), 6.0);
}

TEST(Graph, MatmulGradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto a = random_param("a", 3, 4, rng), b = random_param("b", 4, 2, rng);
  Graph g;
  Tensor w(Shape{3, 2});
  fill_normal(rng, w.data());
  g.set_output(sum(matmul(g.param(a), g.param(b)) * g.constant(w)));
  EXPECT_LT(grad_check(g, {}, {a, b}, 1e-5), 1e-5);
}

TEST(Graph, TwoLayerGeluMlpGradient) {
  Rng rng(12);
  ParameterStore store;
  Mlp net(store, "mlp", MlpSpec{{4, 6, 3}, Activation::Gelu, false}, rng);
  Tensor x(Shape{5, 4});
  fill_normal(rng, x.data());
  Graph g;
  g.set_output(sum(square(net.forward(g, g.input("x")))));
  EXPECT_LT(grad_check(g, {{"x", x}}, net.parameters(), 1e-5), 1e-4);
}

TEST(Graph, GradCheckLinearAndConstant) {
  Rng rng(13);
  auto p = random_param("p", 2, 3, rng);
  Graph lin;
  Tensor w(Shape{2, 3});
  fill_normal(rng, w.data());
  lin.set_output(sum(lin.param(p) * lin.constant(w)));
  EXPECT_LT(grad_check(lin, {}, {p}, 1e-3), 1e-9);

  Graph flat;
  flat.set_output(sum(flat.param(p) * 0.0) + 2.0);
  flat.eval({});
  p->grad.fill(0);
  flat.backward();
  for (double v : p->grad.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(grad_check(flat, {}, {p}, 1e-3), 0.0);
}

TEST(Graph, EvaluationIsPure) {
  Rng rng(14);
  auto p = random_param("p", 3, 3, rng);
  Tensor x(Shape{3, 3});
  fill_normal(rng, x.data());
  Graph g;
  g.set_output(sum(gelu(matmul(g.input("x"), g.param(p)))));
  const double a = g.eval({{"x", x}}).value.item();
  const double b = g.eval({{"x", x}}).value.item();
  EXPECT_EQ(a, b);
}

TEST(Graph, GradientIsLinearInSeed) {
  Rng rng(15);
  auto p = random_param("p", 2, 2, rng);
  Graph g;
  g.set_output(exp(g.param(p)));
  g.eval({});
  Tensor s1(Shape{2, 2}), s2(Shape{2, 2});
  fill_normal(rng, s1.data());
  fill_normal(rng, s2.data());
  Tensor sum12(Shape{2, 2});
  for (std::size_t i = 0; i < 4; ++i) sum12[i] = s1[i] + 2 * s2[i];
  p->grad.fill(0);
  g.backward(s1);
  const Tensor g1 = p->grad;
  p->grad.fill(0);
  g.backward(s2);
  const Tensor g2 = p->grad;
  p->grad.fill(0);
  g.backward(sum12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p->grad[i], g1[i] + 2 * g2[i], 1e-12);
}

TEST(Graph, BroadcastShapes) {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var row = g.constant(Tensor::matrix(1, 3, {10, 20, 30}));
  Var col = g.constant(Tensor::matrix(2, 1, {2, 3}));
  g.set_output((a + row) * col);
  const Tensor out = g.eval({}).value;
  EXPECT_EQ(out, Tensor::matrix(2, 3, {22, 44, 66, 42, 75, 108}));
}

TEST(Graph, ReportsNonFiniteNode) {
  Graph g;
  Var x = g.input("x");
  Var y = log(x);
  g.label(y, "log_x");
  g.set_output(y);
  auto r = g.eval({{"x", Tensor::scalar(-1)}});
  EXPECT_FALSE(r.finite);
  ASSERT_TRUE(r.nonfinite_node.has_value());
}

TEST(Graph, MissingInputThrows) {
  Graph g;
  g.set_output(g.input("x") + 1.0);
  EXPECT_THROW(g.eval({}), std::exception);
}

TEST(Graph, ShapeMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor(Shape{2, 3}));
  Var b = g.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(g.set_output(a + b); g.eval({}), std::exception);
}

TEST(Graph, EveryPrimitivePassesGradientChecks) {
  const auto s = oracle::gradient_suite(21, 20);
  EXPECT_TRUE(s.ok()) << s.detail << " worst " << s.worst;
}

TEST(Optimizer, CosineScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_annealed_lr(0.1, 0.0, 10.0), 0.1);
  EXPECT_NEAR(cosine_annealed_lr(0.1, 5.0, 10.0), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(cosine_annealed_lr(0.1, 3.0, 0.0), 0.1);
}

TEST(Optimizer, SgdStepMovesAgainstGradient) {
  ParameterStore store;
  auto p = store.add("w", Tensor::scalar(1.0));
  p->grad = Tensor::scalar(2.0);
  Optimizer opt(store, OptimizerConfig{OptimizerKind::Sgd, 0.0});
  opt.step(0.1);
  EXPECT_NEAR(p->value.item(), 0.8, 1e-15);
}
