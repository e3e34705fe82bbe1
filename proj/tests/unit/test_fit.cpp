#include <gtest/gtest.h>

#include <cmath>

#include "gen.hpp"
#include "scatfit/fit.hpp"
#include "sphere.hpp"

using namespace scatfit;
using scatfit::testing::Gen;

namespace {

std::shared_ptr<DataSet> data1(std::vector<double> x, std::vector<double> y,
                               std::optional<std::vector<double>> s = std::nullopt) {
  return std::make_shared<DataSet>("d", std::vector<std::vector<double>>{std::move(x)},
                                   std::move(y), std::move(s));
}

void expect_non_increasing(const std::vector<double>& h) {
  for (std::size_t i = 1; i < h.size(); ++i) ASSERT_LE(h[i], h[i - 1]) << "at " << i;
}

struct Line {
  Variable x{"x"};
  Parameter a{"a", 0.0};
  Parameter b{"b", 0.0};
  Functor f{"line", Expr(a) * x + b, {x}};
};

std::shared_ptr<DataSet> sphere_data(double R_true = 7.5) {
  std::vector<double> q, I;
  for (int i = 1; i <= 400; ++i) {
    q.push_back(0.005 * i);
    I.push_back(scatfit::testing::sphere_intensity(0.005 * i, R_true, 1.2e-3, 4.0, 1e5));
  }
  return data1(q, I);
}

CallbackObjective sphere_function(std::vector<Parameter>& ps) {
  return CallbackObjective(ps, [](std::span<const double> v) {
    return std::vector<double>(v.begin(), v.end());
  });
}

CallbackObjective rosenbrock(std::vector<Parameter>& ps) {
  return CallbackObjective(ps, [](std::span<const double> v) {
    return std::vector<double>{10.0 * (v[1] - v[0] * v[0]), 1.0 - v[0]};
  });
}

}  // namespace

TEST(LM, ExactLineFit) {
  Line l;
  std::vector<double> xs, ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(i);
    ys.push_back(2.0 * i + 1.0);
  }
  Model m("m", l.f, data1(xs, ys, std::vector<double>(10, 1.0)));
  FitResult r = fit_lm(m);
  EXPECT_NEAR(l.a.value(), 2.0, 1e-10);
  EXPECT_NEAR(l.b.value(), 1.0, 1e-10);
  EXPECT_LT(r.chi2(), 1e-20);
  EXPECT_EQ(r.status, FitStatus::converged);
  expect_non_increasing(r.chi2_history);
  EXPECT_EQ(r.chi2_history.size() >= 2, true);
}

TEST(LM, AllFixedRejected) {
  Line l;
  l.a.set_fixed(true);
  l.b.set_fixed(true);
  Model m("m", l.f, data1({1, 2, 3}, {1, 2, 3}));
  try {
    fit_lm(m);
    FAIL();
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("no free parameters"), std::string::npos);
  }
}

TEST(LM, SphereRecoversRadius) {
  scatfit::testing::SphereModel s;
  s.R.set_value(7.0);
  s.C.set_fixed(true);
  s.B.set_fixed(true);
  Model m("m", s.functor(), sphere_data());
  FitResult r = fit_lm(m);
  EXPECT_NEAR(s.R.value(), 7.5, 1e-6);
  expect_non_increasing(r.chi2_history);
  ASSERT_EQ(r.errors.size(), 1u);
}

TEST(LM, SphereThreeParameters) {
  scatfit::testing::SphereModel s;
  s.R.set_value(7.2);
  s.C.set_value(1.0e-3);
  s.B.set_value(6.0);
  Model m("m", s.functor(), sphere_data(), Scaling::log);
  FitResult r = fit_lm(m);
  EXPECT_NEAR(s.R.value(), 7.5, 1e-6);
  EXPECT_NEAR(s.C.value(), 1.2e-3, 1e-9);
  EXPECT_NEAR(s.B.value(), 4.0, 1e-5);
  expect_non_increasing(r.chi2_history);
}

TEST(LM, BoundsAndFixedRespected) {
  Line l;
  l.a.set_bounds(Bounds{-1.0, 1.5});
  l.b.set_fixed(true);
  const double b0 = l.b.raw_value();
  std::vector<double> xs, ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(i);
    ys.push_back(2.0 * i + 1.0);
  }
  Model m("m", l.f, data1(xs, ys));
  FitResult r = fit_lm(m);
  EXPECT_EQ(l.b.raw_value(), b0);
  EXPECT_LE(l.a.raw_value(), 1.5);
  EXPECT_NEAR(l.a.raw_value(), 1.5, 1e-12);
  expect_non_increasing(r.chi2_history);
}

TEST(LM, NonFiniteStartRejected) {
  Variable x("x");
  Parameter p("p", -1.0);
  Model m("m", Functor("f", log(Expr(p)) + x, {x}), data1({1, 2, 3}, {1, 2, 3}));
  EXPECT_THROW(fit_lm(m), FitError);
  EXPECT_EQ(p.value(), -1.0);
}

TEST(LM, ForwardJacobianMatchesCentralOracle) {
  Gen g(51);
  scatfit::testing::SphereModel s;
  Model m("m", s.functor(), sphere_data());
  for (int c = 0; c < 20; ++c) {
    s.R.set_value(g.uniform(5, 10));
    s.C.set_value(g.uniform(0.8e-3, 2e-3));
    s.B.set_value(g.uniform(1, 10));
    const auto fwd = numeric_jacobian(m, Difference::forward);
    const auto cen = numeric_jacobian(m, Difference::central);
    for (std::size_t j = 0; j < fwd[0].size(); ++j) {
      double num = 0, den = 0;
      for (std::size_t i = 0; i < fwd.size(); ++i) {
        num += (fwd[i][j] - cen[i][j]) * (fwd[i][j] - cen[i][j]);
        den += cen[i][j] * cen[i][j];
      }
      ASSERT_LT(std::sqrt(num / den), 1e-4);
    }
  }
}

TEST(DE, SphereFunction4D) {
  std::vector<Parameter> ps;
  for (int i = 0; i < 4; ++i) ps.emplace_back("p" + std::to_string(i), 3.0, 1.0, Bounds{-5, 5});
  auto obj = sphere_function(ps);
  DEOptions o;
  o.population_size = 40;
  o.F = 0.8;
  o.Cr = 0.9;
  o.max_generations = 200;
  o.seed = 7;
  FitResult r = fit_de(obj, o);
  EXPECT_LT(r.chi2(), 1e-10);
  expect_non_increasing(r.chi2_history);
}

TEST(DE, Rosenbrock) {
  std::vector<Parameter> ps{Parameter("x", -1.5, 1.0, Bounds{-2, 2}), Parameter("y", 1.5, 1.0, Bounds{-2, 2})};
  auto obj = rosenbrock(ps);
  DEOptions o;
  o.seed = 11;
  FitResult r = fit_de(obj, o);
  EXPECT_NEAR(ps[0].value(), 1.0, 1e-6);
  EXPECT_NEAR(ps[1].value(), 1.0, 1e-6);
  expect_non_increasing(r.chi2_history);
}

TEST(DE, DeterministicUnderSeed) {
  auto run = [] {
    std::vector<Parameter> ps{Parameter("x", 0.0, 1.0, Bounds{-2, 2}), Parameter("y", 0.0, 1.0, Bounds{-2, 2})};
    auto obj = rosenbrock(ps);
    DEOptions o;
    o.seed = 99;
    o.max_generations = 50;
    o.candidate_polish_iters = 2;
    return fit_de(obj, o);
  };
  const FitResult a = run(), b = run();
  EXPECT_EQ(a.chi2_history, b.chi2_history);
  EXPECT_EQ(a.raw_values, b.raw_values);
}

TEST(DE, RequiresFiniteBoundsAndPopulation) {
  std::vector<Parameter> ps{Parameter("free_one", 0.0)};
  auto obj = sphere_function(ps);
  try {
    fit_de(obj);
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("free_one"), std::string::npos);
  }
  std::vector<Parameter> bounded{Parameter("p", 0.0, 1.0, Bounds{-1, 1})};
  auto obj2 = sphere_function(bounded);
  DEOptions o;
  o.population_size = 3;
  EXPECT_THROW(fit_de(obj2, o), ValueError);
}

TEST(DE, KeepsFixedAndBounds) {
  scatfit::testing::SphereModel s;
  s.R.set_value(6.0);
  s.B.set_fixed(true);
  Model m("m", s.functor(), sphere_data());
  DEOptions o;
  o.seed = 3;
  o.max_generations = 30;
  fit_de(m, o);
  EXPECT_EQ(s.B.value(), 4.0);
  EXPECT_TRUE(s.R.bounds()->contains(s.R.raw_value()));
  EXPECT_TRUE(s.C.bounds()->contains(s.C.raw_value()));
}

TEST(Errors, WeightedLineMatchesClosedForm) {
  Gen g(52);
  Line l;
  const int n = 25;
  std::vector<double> xs, ys, ss;
  for (int i = 0; i < n; ++i) {
    xs.push_back(0.4 * i - 2.0);
    ss.push_back(g.uniform(0.2, 2.0));
    ys.push_back(1.7 * xs.back() - 0.4 + ss.back() * g.uniform(-1.5, 1.5));
  }
  Model m("m", l.f, data1(xs, ys, ss));
  fit_lm(m);
  // Closed-form weighted least squares.
  double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double w = 1.0 / (ss[i] * ss[i]);
    S += w;
    Sx += w * xs[i];
    Sy += w * ys[i];
    Sxx += w * xs[i] * xs[i];
    Sxy += w * xs[i] * ys[i];
  }
  const double delta = S * Sxx - Sx * Sx;
  const double a = (S * Sxy - Sx * Sy) / delta;
  const double b = (Sxx * Sy - Sx * Sxy) / delta;
  double chi = 0;
  for (int i = 0; i < n; ++i) chi += std::pow((ys[i] - a * xs[i] - b) / ss[i], 2);
  const double red = chi / (n - 2);
  const double sa = std::sqrt(red * S / delta), sb = std::sqrt(red * Sxx / delta);
  EXPECT_NEAR(l.a.value(), a, 1e-9);
  EXPECT_NEAR(l.b.value(), b, 1e-9);
  const ErrorEstimate e = estimate_errors(m);
  ASSERT_TRUE(e.sigma[0] && e.sigma[1]);
  EXPECT_NEAR(*e.sigma[0], sa, 1e-8 * sa);
  EXPECT_NEAR(*e.sigma[1], sb, 1e-8 * sb);
  EXPECT_EQ(l.a.error(), e.sigma[0]);
}

TEST(Errors, DuplicatedParameterSingleEntry) {
  Variable x("x");
  Parameter a("a", 1.0);
  Parameter alias = a;
  Model m("m", Functor("f", Expr(a) * x + Expr(alias), {x}), data1({1, 2, 3, 4}, {2, 3.1, 3.9, 5}));
  fit_lm(m);
  EXPECT_EQ(estimate_errors(m).sigma.size(), 1u);
}

TEST(Errors, IgnoredParameterUnidentifiable) {
  Variable x("x");
  Parameter a("a", 1.0), ghost("ghost", 3.0);
  Model m("m", Functor("f", Expr(a) * x + 0.0 * ghost, {x}), data1({1, 2, 3, 4}, {1.1, 2, 2.9, 4.2}));
  fit_lm(m);
  const ErrorEstimate e = estimate_errors(m);
  ASSERT_EQ(e.parameters.size(), 2u);
  const std::size_t g = e.parameters[0] == ghost ? 0 : 1;
  EXPECT_FALSE(e.sigma[g].has_value());
  EXPECT_TRUE(e.sigma[1 - g].has_value());
  EXPECT_FALSE(ghost.error().has_value());
}

TEST(FitProperty, SimultaneousFitSeparability) {
  Gen g(53);
  for (int c = 0; c < scatfit::testing::kCases; ++c) {
    Line l1, l2;
    const int n1 = g.integer(4, 12), n2 = g.integer(4, 12);
    auto x1 = g.vec(n1, -2, 2), x2 = g.vec(n2, -2, 2);
    std::vector<double> y1, y2;
    const double a1 = g.uniform(-3, 3), b1 = g.uniform(-3, 3), a2 = g.uniform(-3, 3), b2 = g.uniform(-3, 3);
    for (double v : x1) y1.push_back(a1 * v + b1 + g.uniform(-0.3, 0.3));
    for (double v : x2) y2.push_back(a2 * v + b2 + g.uniform(-0.3, 0.3));
    auto m1 = std::make_shared<Model>("m1", l1.f, data1(x1, y1, std::vector<double>(n1, 0.5)));
    auto m2 = std::make_shared<Model>("m2", l2.f, data1(x2, y2, std::vector<double>(n2, 0.5)));
    LMOptions o;
    o.estimate_errors = false;
    const FitResult joint = fit_lm(MultiModel({m1, m2}), o);
    expect_non_increasing(joint.chi2_history);
    const double ja1 = l1.a.value(), jb1 = l1.b.value(), ja2 = l2.a.value(), jb2 = l2.b.value();
    for (auto* p : {&l1.a, &l1.b, &l2.a, &l2.b}) p->set_value(0.0);
    fit_lm(*m1, o);
    fit_lm(*m2, o);
    ASSERT_NEAR(ja1, l1.a.value(), 1e-8);
    ASSERT_NEAR(jb1, l1.b.value(), 1e-8);
    ASSERT_NEAR(ja2, l2.a.value(), 1e-8);
    ASSERT_NEAR(jb2, l2.b.value(), 1e-8);
  }
}

TEST(FitProperty, SharedParameterMinimizesCombinedSum) {
  Variable x("x");
  Parameter k("k", 0.5, 1.0, Bounds{0.0, 3.0});
  auto m1 = std::make_shared<Model>("m1", Functor("f1", exp(-Expr(k) * x), {x}),
                                    data1({0.1, 0.5, 1.0, 2.0}, {0.9, 0.55, 0.3, 0.1}, std::vector<double>(4, 0.05)));
  auto m2 = std::make_shared<Model>("m2", Functor("f2", Expr(k) * x * x, {x}),
                                    data1({1.0, 2.0, 3.0}, {1.5, 5.0, 12.0}, std::vector<double>(3, 1.0)));
  MultiModel mm({m1, m2});
  fit_lm(mm);
  const double fitted = k.value();
  // Brute-force grid oracle, refined twice.
  double best = 0, lo = 0.0, hi = 3.0;
  for (int pass = 0; pass < 3; ++pass) {
    double best_s = 1e300;
    for (int i = 0; i <= 2000; ++i) {
      const double v = lo + (hi - lo) * i / 2000.0;
      k.set_value(v);
      const double s = mm.chi2();
      if (s < best_s) {
        best_s = s;
        best = v;
      }
    }
    const double w = (hi - lo) / 2000.0;
    lo = std::max(0.0, best - 2 * w);
    hi = std::min(3.0, best + 2 * w);
  }
  EXPECT_NEAR(fitted, best, 1e-6);
}

TEST(Controller, ImmediateInterrupt) {
  std::vector<Parameter> ps{Parameter("x", -1.5, 1.0, Bounds{-2, 2}), Parameter("y", 1.5, 1.0, Bounds{-2, 2})};
  auto obj = std::make_shared<CallbackObjective>(rosenbrock(ps));
  DEOptions o;
  o.max_generations = 100000;
  FitController c(obj, Optimizer::de, {}, o);
  c.start();
  c.interrupt();
  const FitResult& r = c.wait();
  EXPECT_EQ(r.status, FitStatus::interrupted);
  EXPECT_EQ(ps[0].raw_value(), r.raw_values[0]);
  EXPECT_EQ(ps[1].raw_value(), r.raw_values[1]);
  EXPECT_LE(r.chi2(), r.chi2_history.front());
}

TEST(Controller, EventsMirrorHistory) {
  scatfit::testing::SphereModel s;
  s.R.set_value(7.0);
  auto m = std::make_shared<Model>("m", s.functor(), sphere_data());
  FitController c(m, Optimizer::lm);
  c.start();
  const FitResult& r = c.wait();
  const auto ev = c.events();
  ASSERT_EQ(ev.size(), r.chi2_history.size());
  for (std::size_t i = 0; i < ev.size(); ++i) {
    EXPECT_EQ(ev[i].iteration, static_cast<int>(i));
    EXPECT_EQ(ev[i].chi2, r.chi2_history[i]);
  }
  EXPECT_EQ(r.status, FitStatus::converged);
}

TEST(Controller, DeEventsIncludePolish) {
  std::vector<Parameter> ps{Parameter("x", 0.0, 1.0, Bounds{-2, 2}), Parameter("y", 0.0, 1.0, Bounds{-2, 2})};
  auto obj = std::make_shared<CallbackObjective>(rosenbrock(ps));
  DEOptions o;
  o.max_generations = 20;
  FitController c(obj, Optimizer::de, {}, o);
  c.start();
  const FitResult& r = c.wait();
  const auto ev = c.events();
  ASSERT_EQ(ev.size(), r.chi2_history.size());
  for (std::size_t i = 0; i < ev.size(); ++i) {
    EXPECT_EQ(ev[i].iteration, static_cast<int>(i));
    EXPECT_EQ(ev[i].chi2, r.chi2_history[i]);
  }
}

TEST(Controller, OverlappingPoolRejectedDisjointConcurrent) {
  auto make = [](double start) {
    auto s = std::make_shared<scatfit::testing::SphereModel>();
    s->R.set_value(start);
    return s;
  };
  auto s1 = make(7.0), s2 = make(8.0);
  auto m1 = std::make_shared<Model>("m1", s1->functor(), sphere_data(7.5));
  auto m2 = std::make_shared<Model>("m2", s2->functor(), sphere_data(7.9));
  auto m1b = std::make_shared<Model>("m1b", s1->functor(), sphere_data(7.5));

  DEOptions slow;
  slow.max_generations = 100000;
  slow.final_polish_iters = 0;
  FitController busy(m1, Optimizer::de, {}, slow);
  busy.start();
  FitController clash(m1b, Optimizer::lm);
  EXPECT_THROW(clash.start(), FitError);
  FitController other(m2, Optimizer::lm);
  other.start();
  const FitResult concurrent = other.wait();
  busy.interrupt();
  busy.wait();

  // Sequential rerun of the second fit from the same start gives the same answer.
  s2->R.set_value(8.0);
  s2->C.set_raw_value(1.2);
  s2->B.set_value(4.0);
  const FitResult sequential = fit_lm(*m2);
  EXPECT_EQ(concurrent.chi2_history, sequential.chi2_history);
  EXPECT_EQ(concurrent.raw_values, sequential.raw_values);
  // After the busy fit ends, the pool is free again.
  FitController again(m1b, Optimizer::lm);
  EXPECT_NO_THROW(again.start());
  again.wait();
}
