#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gen.hpp"
#include "scatfit/model.hpp"
#include "sphere.hpp"

using namespace scatfit;
using scatfit::testing::Gen;

namespace {

std::shared_ptr<DataSet> data1(std::vector<double> x, std::vector<double> y,
                               std::optional<std::vector<double>> s = std::nullopt) {
  return std::make_shared<DataSet>("d", std::vector<std::vector<double>>{std::move(x)},
                                   std::move(y), std::move(s));
}

}  // namespace

TEST(Residuals, PerfectModelZeroForEveryScaling) {
  Variable x("x");
  Parameter a("a", 2.0);
  Expr body = Expr(a) * exp(x);
  std::vector<double> xs = {0.1, 0.5, 1.0}, ys;
  for (double v : xs) ys.push_back(2.0 * std::exp(v));
  for (Scaling s : {Scaling::linear, Scaling::log, Scaling::q2, Scaling::q4}) {
    Model m("m", Functor("f", body, {x}), data1(xs, ys), s);
    for (double r : m.residuals()) EXPECT_EQ(r, 0.0);
  }
}

TEST(Residuals, LinearHandCase) {
  Variable x("x");
  Model m("m", Functor("f", Expr(8.0) + 0.0 * x, {x}), data1({1.0}, {10.0}, std::vector<double>{1.0}));
  EXPECT_EQ(m.residuals(), (std::vector<double>{2.0}));
}

TEST(Residuals, LogHandCase) {
  Variable x("x");
  Model m("m", Functor("f", Expr(100.0 * std::numbers::e) + 0.0 * x, {x}),
          data1({1.0}, {100.0}, std::vector<double>{10.0}), Scaling::log);
  EXPECT_NEAR(m.residuals()[0], -10.0, 1e-12);
  // Unscaled residuals ignore the model's scaling.
  EXPECT_NEAR(m.residuals(false)[0], (100.0 - 100.0 * std::numbers::e) / 10.0, 1e-12);
}

TEST(Residuals, QPowerUsesCoordinateNorm) {
  Variable qx("qx"), qy("qy");
  auto d = std::make_shared<DataSet>("d", std::vector<std::vector<double>>{{3.0}, {4.0}},
                                     std::vector<double>{10.0}, std::vector<double>{2.0});
  Model m("m", Functor("f", Expr(6.0) + 0.0 * qx + 0.0 * qy, {qx, qy}), d, Scaling::q2);
  // q^2 = 25: (250 - 150) / 50
  EXPECT_NEAR(m.residuals()[0], 2.0, 1e-15);
  m.set_scaling(Scaling::q4);
  EXPECT_NEAR(m.residuals()[0], 2.0, 1e-15);
}

TEST(Residuals, Errors) {
  Variable x("x");
  Parameter a("a", 1.0);
  auto d = data1({1, 2, 3}, {1, -2, 3});
  Model lg("m", Functor("f", Expr(a) + 0.0 * x, {x}), d, Scaling::log);
  EXPECT_THROW(lg.residuals(), ValueError);
  d->mask_range(1, 2);
  EXPECT_NO_THROW(lg.residuals());
  d->mask_range(0, 3);
  EXPECT_THROW(lg.residuals(), ValueError);
  d->clear_mask();
  Model bad("m", Functor("f", log(Expr(x) - 2.5), {x}), d);
  EXPECT_THROW(bad.residuals(), EvalError);
  Variable y("y");
  EXPECT_THROW(Model("m", Functor("f", Expr(x) + y, {x, y}), d), ValueError);
  EXPECT_THROW(Model("m", Functor("f", make_complex(x, 1.0), {x}), d), ValueError);
}

TEST(Chi2, HandCase) {
  Variable x("x");
  Parameter a("a", 1.0);
  // residuals (1, 1, 1), one free parameter.
  Model m("m", Functor("f", Expr(a) + 0.0 * x, {x}), data1({1, 2, 3}, {2, 2, 2}, std::vector<double>{1, 1, 1}));
  EXPECT_EQ(m.chi2(), 1.5);
  a.set_value(2.0);
  EXPECT_EQ(m.chi2(), 0.0);
}

TEST(Chi2, NeedsMorePointsThanParameters) {
  Variable x("x");
  Parameter a("a", 1.0), b("b", 1.0);
  Model m("m", Functor("f", Expr(a) + Expr(b) * x, {x}), data1({1, 2}, {2, 2}));
  EXPECT_THROW(m.chi2(), ValueError);
}

TEST(Chi2, ScaledFalseForcesLinear) {
  scatfit::testing::SphereModel s;
  std::vector<double> q, I;
  for (int i = 1; i <= 50; ++i) {
    q.push_back(0.02 * i);
    I.push_back(1.1 * scatfit::testing::sphere_intensity(0.02 * i, 7.5, 1.2e-3, 4, 1e5));
  }
  Model lin("lin", s.functor(), data1(q, I), Scaling::linear);
  Model lg("log", s.functor(), data1(q, I), Scaling::log);
  EXPECT_NE(lin.chi2(true), lg.chi2(true));
  EXPECT_EQ(lin.chi2(false), lg.chi2(false));
}

TEST(MultiModel, DisjointCombination) {
  Variable x("x");
  Parameter a("a", 1.0), b("b", 2.0), c("c", 0.5);
  auto m1 = std::make_shared<Model>("m1", Functor("f1", Expr(a) * x, {x}), data1({1, 2, 3, 4}, {1.5, 2, 2, 5}));
  auto m2 = std::make_shared<Model>("m2", Functor("f2", Expr(b) + Expr(c) * x, {x}), data1({0, 1, 2}, {2, 3, 3.5}));
  MultiModel mm({m1, m2});
  double s1 = 0, s2 = 0;
  for (double r : m1->residuals()) s1 += r * r;
  for (double r : m2->residuals()) s2 += r * r;
  EXPECT_DOUBLE_EQ(mm.chi2(), (s1 + s2) / (4 + 3 - 1 - 2));
  EXPECT_EQ(mm.parameters().size(), 3u);
}

TEST(MultiModel, SharedParameterOncePerPool) {
  Variable x("x"), y("y");
  Parameter shared("s", 1.0);
  auto m1 = std::make_shared<Model>("m1", Functor("f1", Expr(shared) * x, {x}), data1({1, 2}, {1, 2}));
  auto d2 = std::make_shared<DataSet>("d2", std::vector<std::vector<double>>{{1, 2}, {3, 4}},
                                      std::vector<double>{1, 2});
  auto m2 = std::make_shared<Model>("m2", Functor("f2", Expr(shared) * x * y, {x, y}), d2);
  MultiModel mm({m1, m2});
  ASSERT_EQ(mm.parameters().size(), 1u);
  EXPECT_EQ(mm.normalization(), 3.0);
}

static Expr random_body(Gen& g, const Variable& x, const std::vector<Parameter>& ps) {
  Expr e = 0.0;
  for (const auto& p : ps) {
    switch (g.integer(0, 2)) {
      case 0: e = e + Expr(p) * x; break;
      case 1: e = e + Expr(p) * exp(-Expr(x) * g.uniform(0.1, 1)); break;
      default: e = e + Expr(p); break;
    }
  }
  return 5.0 + abs(e);
}

TEST(ModelProperty, Chi2NonNegativeResidualCountAndScalingsAgreeAtTruth) {
  Gen g(41);
  Variable x("x");
  for (int c = 0; c < scatfit::testing::kCases; ++c) {
    std::vector<Parameter> ps;
    const int m = g.integer(1, 3);
    for (int i = 0; i < m; ++i) ps.emplace_back("p" + std::to_string(i), g.uniform(-2, 2));
    Expr body = random_body(g, x, ps);
    const int n = g.integer(m + 2, 30);
    auto xs = g.vec(n, 0.1, 3);
    Functor f("f", body, {x});
    auto exact = f.evaluate({xs});
    auto d = data1(xs, exact);
    for (int i = 0; i < n; ++i)
      if (g.integer(0, 5) == 0 && d->active_count() > static_cast<std::size_t>(m) + 1) {
        const std::size_t k = i;
        d->mask_indices(std::span<const std::size_t>(&k, 1));
      }
    for (Scaling s : {Scaling::linear, Scaling::log, Scaling::q2, Scaling::q4}) {
      Model model("m", f, d, s);
      const auto r = model.residuals();
      ASSERT_EQ(r.size(), d->active_count());
      ASSERT_EQ(model.chi2(), 0.0);
    }
    // Perturbed data: chi2 > 0, and MultiModel over one model is bit-identical.
    std::vector<double> noisy = exact;
    for (auto& v : noisy) v *= 1.0 + g.uniform(-0.1, 0.1);
    auto d2 = data1(xs, noisy);
    d2->set_mask(d->mask());
    for (Scaling s : {Scaling::linear, Scaling::log, Scaling::q2, Scaling::q4}) {
      auto model = std::make_shared<Model>("m", f, d2, s);
      const double c2 = model->chi2();
      ASSERT_GE(c2, 0.0);
      ASSERT_EQ(MultiModel({model}).chi2(), c2);
    }
  }
}

TEST(ModelProperty, MultiModelSeparability) {
  Gen g(42);
  Variable x("x");
  for (int c = 0; c < scatfit::testing::kCases; ++c) {
    std::vector<Parameter> p1{Parameter("a", g.uniform(-2, 2))};
    std::vector<Parameter> p2{Parameter("b", g.uniform(-2, 2)), Parameter("c", g.uniform(-2, 2))};
    const int n1 = g.integer(3, 20), n2 = g.integer(4, 20);
    auto x1 = g.vec(n1, 0.1, 3), x2 = g.vec(n2, 0.1, 3);
    auto m1 = std::make_shared<Model>("m1", Functor("f1", random_body(g, x, p1), {x}),
                                      data1(x1, g.vec(n1, 1, 10)));
    auto m2 = std::make_shared<Model>("m2", Functor("f2", random_body(g, x, p2), {x}),
                                      data1(x2, g.vec(n2, 1, 10)));
    MultiModel mm({m1, m2});
    double s1 = 0, s2 = 0;
    for (double r : m1->residuals()) s1 += r * r;
    for (double r : m2->residuals()) s2 += r * r;
    const double expect = (s1 + s2) / (n1 + n2 - 1 - 2);
    ASSERT_TRUE(scatfit::testing::close_rel(mm.chi2(), expect, 1e-14));
    const auto combined = mm.residuals();
    ASSERT_EQ(combined.size(), static_cast<std::size_t>(n1 + n2));
  }
}
