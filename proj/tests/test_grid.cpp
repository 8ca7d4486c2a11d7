#include <doctest.h>

#include <cmath>
#include <random>

#include "bayeseg/grid.hpp"
#include "oracles.hpp"

using namespace bayeseg;

namespace {

// Dyadic-rational test fields keep every stencil operation exact in binary
// floating point, so "equals the dense oracle" can be checked with ==.
ImageGrid dyadic_grid(int w, int h, std::mt19937& gen, bool nonneg = false) {
  std::uniform_int_distribution<int> d(nonneg ? 0 : -8, 8);
  ImageGrid g(w, h);
  for (double& v : g.data) v = d(gen) * 0.25;
  return g;
}

}  // namespace

TEST_SUITE("grid") {

TEST_CASE("image grid basics") {
  CHECK_THROWS_AS(ImageGrid(0, 3), std::invalid_argument);
  ImageGrid g(3, 2, 1.5);
  CHECK(g.size() == 6);
  g.at(2, 1) = -4.0;
  CHECK(g[5] == -4.0);
  CHECK(all_finite(g));
  g[0] = std::nan("");
  CHECK(!all_finite(g));
}

TEST_CASE("difference operator anchors") {
  StencilOperator op(4, 4);
  ImageGrid c(4, 4, 1.0);
  const ImageGrid out = op.apply(c);
  CHECK(out.at(1, 1) == 0.0);        // interior: all four neighbors present
  CHECK(out.at(2, 2) == 0.0);
  CHECK(out.at(0, 0) == 0.5);        // corner: two neighbors zero-padded

  StencilOperator op1(1, 1);
  ImageGrid one(1, 1, 3.5);
  CHECK(op1.apply(one)[0] == 3.5);

  ImageGrid wrong(3, 3, 0.0);
  CHECK_THROWS_AS((void)op.apply(wrong), std::invalid_argument);
}

TEST_CASE("transpose anchors") {
  StencilOperator op1(1, 1);
  ImageGrid one(1, 1, 1.0);
  CHECK(op1.apply_transpose(one)[0] == 1.0);

  // Column of D read off a delta at an interior pixel.
  StencilOperator op(5, 5);
  ImageGrid delta(5, 5, 0.0);
  delta.at(2, 2) = 1.0;
  const ImageGrid col = op.apply_transpose(delta);
  CHECK(col.at(2, 2) == 1.0);
  CHECK(col.at(1, 2) == -0.25);
  CHECK(col.at(3, 2) == -0.25);
  CHECK(col.at(2, 1) == -0.25);
  CHECK(col.at(2, 3) == -0.25);
  CHECK(col.at(0, 0) == 0.0);
}

TEST_CASE("adjoint identity on random pairs") {
  StencilOperator op(8, 8);
  std::mt19937 gen(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    ImageGrid f(8, 8), g(8, 8);
    for (double& v : f.data) v = nd(gen);
    for (double& v : g.data) v = nd(gen);
    const ImageGrid df = op.apply(f);
    const ImageGrid dtg = op.apply_transpose(g);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      lhs += df[i] * g[i];
      rhs += f[i] * dtg[i];
    }
    CHECK(std::abs(lhs - rhs) < 1e-12);
  }
}

TEST_CASE("linearity") {
  StencilOperator op(7, 5);
  std::mt19937 gen(5);
  std::normal_distribution<double> nd;
  ImageGrid f(7, 5), g(7, 5);
  for (double& v : f.data) v = nd(gen);
  for (double& v : g.data) v = nd(gen);
  const double a = 1.75, b = -0.5;
  ImageGrid comb(7, 5);
  for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = a * f[i] + b * g[i];
  const ImageGrid lhs = op.apply(comb);
  const ImageGrid df = op.apply(f), dg = op.apply(g);
  for (std::size_t i = 0; i < comb.size(); ++i)
    CHECK(std::abs(lhs[i] - (a * df[i] + b * dg[i])) < 1e-12);
}

TEST_CASE("row squared anchors") {
  StencilOperator op(4, 4);
  ImageGrid one(4, 4, 1.0);
  const ImageGrid out = op.row_squared_apply(one);
  CHECK(out.at(1, 1) == 1.25);
  CHECK(out.at(0, 0) == 1.125);

  ImageGrid zero(4, 4, 0.0);
  const ImageGrid z = op.row_squared_apply(zero);
  for (double v : z.data) CHECK(v == 0.0);

  ImageGrid neg(4, 4, -1.0);
  CHECK_THROWS_AS((void)op.row_squared_apply(neg), std::invalid_argument);
}

TEST_CASE("exact agreement with dense matrices up to 6x6") {
  std::mt19937 gen(17);
  for (int w = 1; w <= 6; ++w) {
    for (int h = 1; h <= 6; ++h) {
      const auto D = oracle::dense_stencil(w, h);
      CHECK(std::abs(oracle::determinant(D)) > 1e-6);
      StencilOperator op(w, h);
      for (int rep = 0; rep < 3; ++rep) {
        const ImageGrid f = dyadic_grid(w, h, gen);
        const ImageGrid v = dyadic_grid(w, h, gen, /*nonneg=*/true);
        const ImageGrid af = op.apply(f);
        const ImageGrid atf = op.apply_transpose(f);
        const ImageGrid rs = op.row_squared_apply(v);
        const auto d_af = oracle::dense_apply(D, f);
        const auto d_atf = oracle::dense_apply_transpose(D, f);
        const auto d_rs = oracle::dense_row_squared(D, v);
        for (std::size_t i = 0; i < f.size(); ++i) {
          CHECK(af[i] == d_af[i]);
          CHECK(atf[i] == d_atf[i]);
          CHECK(rs[i] == d_rs[i]);
        }
      }
    }
  }
}

}  // TEST_SUITE
