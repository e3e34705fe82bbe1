#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gen.hpp"
#include "scatfit/data.hpp"

using namespace scatfit;
using scatfit::testing::Gen;

TEST(MakeData, DefaultSigmaWithFloor) {
  DataSet d = make_data("d", {{1, 2, 3}}, {100, 4, 0});
  EXPECT_EQ(d.sigma(), (std::vector<double>{10, 2, 1}));
  DataSet neg = make_data("n", {{1}}, {-5});
  EXPECT_EQ(neg.sigma()[0], 1.0);
}

TEST(MakeData, SuppliedSigmaVerbatim) {
  DataSet d = make_data("d", {{1, 2, 3}}, {5, 6, 7}, std::vector<double>{1, 2, 3});
  EXPECT_EQ(d.sigma(), (std::vector<double>{1, 2, 3}));
}

TEST(MakeData, Errors) {
  EXPECT_THROW(make_data("d", {{1, 2, 3, 4}}, {1, 2, 3, 4, 5}), ValueError);
  EXPECT_THROW(make_data("d", {{1}}, {std::nan("")}), ValueError);
  EXPECT_THROW(make_data("d", {{1, 2}}, {1, 2}, std::vector<double>{1, 0}), ValueError);
  EXPECT_THROW(make_data("d", {{1, 2}}, {1, 2}, std::vector<double>{1, -1}), ValueError);
  EXPECT_THROW(make_data("d", {}, {1, 2}), ValueError);
}

TEST(Mask, CoordinateIntervalExcludesPrimaryBeam) {
  std::vector<double> q, I;
  for (int i = 0; i < 50; ++i) {
    q.push_back(0.01 * i);
    I.push_back(1.0);
  }
  DataSet d = make_data("refl", {q}, I);
  const std::pair<double, double> box[] = {{0.0, 0.12}};
  d.mask_box(box);
  EXPECT_EQ(d.active_count(), 50u - 13u);
  const auto active = d.active_coords();
  for (double x : active[0]) EXPECT_GT(x, 0.12);
  d.mask_box(box, false);
  EXPECT_EQ(d.active_count(), 50u);
  EXPECT_EQ(d.intensity(), I);
}

TEST(Mask, RangeAndIndices) {
  DataSet d = make_data("d", {{0, 1, 2, 3, 4}}, {1, 1, 1, 1, 1});
  d.mask_range(1, 3);
  EXPECT_EQ(d.active_indices(), (std::vector<std::size_t>{0, 3, 4}));
  const std::size_t idx[] = {4};
  d.mask_indices(idx);
  EXPECT_EQ(d.active_indices(), (std::vector<std::size_t>{0, 3}));
  EXPECT_THROW(d.mask_range(2, 6), ValueError);
  const std::size_t bad[] = {5};
  EXPECT_THROW(d.mask_indices(bad), ValueError);
  const std::pair<double, double> box2[] = {{0, 1}, {0, 1}};
  EXPECT_THROW(d.mask_box(box2), ValueError);
}

TEST(LoadText, TwoColumnsDefaultSigma) {
  std::istringstream in("0.1 100\n0.2 50\n");
  DataSet d = load_text(in);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.sigma()[0], 10.0);
  EXPECT_NEAR(d.sigma()[1], 7.0711, 1e-4);
}

TEST(LoadText, CommaWithHeader) {
  std::istringstream in("# header\n1,2,0.5\n");
  DataSet d = load_text(in);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.coords()[0][0], 1.0);
  EXPECT_EQ(d.intensity()[0], 2.0);
  EXPECT_EQ(d.sigma()[0], 0.5);
}

TEST(LoadText, MalformedTokenReportsLine) {
  std::istringstream in("0.1 abc");
  try {
    load_text(in);
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
  std::istringstream in2("# c\n\n1 2\n3\n");
  try {
    load_text(in2);
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(LoadText, ColumnMapRoles) {
  ColumnMap m = ColumnMap::parse("x,x,_,y,sigma");
  EXPECT_EQ(m.coord_columns, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(m.intensity_column, 3u);
  std::istringstream in("1 2 99 10 0.5\n3 4 99 20 0.25\n");
  DataSet d = load_text(in, m);
  EXPECT_EQ(d.dims(), 2u);
  EXPECT_EQ(d.coords()[1][1], 4.0);
  EXPECT_EQ(d.sigma()[1], 0.25);
  EXPECT_THROW(ColumnMap::parse("x,z"), ValueError);
  EXPECT_THROW(ColumnMap::parse("x,x"), ValueError);
  ColumnMap noerr = ColumnMap::parse("y,x");
  std::istringstream in3("9 1 7\n");
  DataSet d3 = load_text(in3, noerr);
  EXPECT_EQ(d3.intensity()[0], 9.0);
  EXPECT_EQ(d3.sigma()[0], 3.0);
}

TEST(DataProperty, SaveLoadRoundTrip) {
  Gen g(31);
  for (int c = 0; c < scatfit::testing::kCases; ++c) {
    const int n = g.integer(1, 20);
    const int dims = g.integer(1, 3);
    std::vector<std::vector<double>> coords(dims);
    for (auto& col : coords) col = g.vec(n, -10, 10);
    std::vector<double> I(n);
    for (auto& v : I) v = g.wide(-5, 8);
    DataSet d = make_data("d", coords, I);
    for (int i = 0; i < n; ++i)
      if (g.integer(0, 4) == 0) {
        const std::size_t k = i;
        d.mask_indices(std::span<const std::size_t>(&k, 1));
      }
    std::stringstream buf;
    save_text(buf, d);
    if (d.active_count() == 0) continue;
    std::string spec;
    for (int k = 0; k < dims; ++k) spec += "x,";
    spec += "y,sigma";
    DataSet back = load_text(buf, ColumnMap::parse(spec));
    const auto idx = d.active_indices();
    ASSERT_EQ(back.size(), idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      for (int dd = 0; dd < dims; ++dd) ASSERT_EQ(back.coords()[dd][k], d.coords()[dd][idx[k]]);
      ASSERT_EQ(back.intensity()[k], d.intensity()[idx[k]]);
      ASSERT_EQ(back.sigma()[k], d.sigma()[idx[k]]);
    }
  }
}

TEST(DataProperty, MaskIdempotentAndCommuting) {
  Gen g(32);
  for (int c = 0; c < scatfit::testing::kCases; ++c) {
    const int n = g.integer(1, 40);
    DataSet base = make_data("d", {g.vec(n, 0, 1)}, g.vec(n, 0, 100));
    const std::size_t a0 = g.integer(0, n), a1 = g.integer(static_cast<int>(a0), n);
    const double lo = g.uniform(0, 1), hi = g.uniform(lo, 1);
    const std::pair<double, double> box[] = {{lo, hi}};
    const bool on1 = g.coin(), on2 = g.coin();

    DataSet once = base;
    once.mask_range(a0, a1, on1);
    DataSet twice = once;
    twice.mask_range(a0, a1, on1);
    ASSERT_EQ(once.mask(), twice.mask());

    DataSet b1 = base;
    b1.mask_box(box, on2);
    DataSet b2 = b1;
    b2.mask_box(box, on2);
    ASSERT_EQ(b1.mask(), b2.mask());

    if (on1 == on2) {
      DataSet x = base, y = base;
      x.mask_range(a0, a1, on1);
      x.mask_box(box, on2);
      y.mask_box(box, on2);
      y.mask_range(a0, a1, on1);
      ASSERT_EQ(x.mask(), y.mask());
    }
    ASSERT_EQ(once.intensity(), base.intensity());
    ASSERT_EQ(once.coords(), base.coords());

    DataSet inv = base;
    inv.mask_range(a0, a1, true);
    inv.mask_range(a0, a1, false);
    ASSERT_EQ(inv.mask(), base.mask());
  }
}
