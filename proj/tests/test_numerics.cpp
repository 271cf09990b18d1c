#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "ftlab/errors.hpp"
#include "ftlab/gradcheck.hpp"
#include "ftlab/matrix.hpp"
#include "ftlab/rng.hpp"
#include "ftlab/tape.hpp"

using namespace ftlab;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data) x = rng.normal(0.0, sd);
  return m;
}

std::vector<std::pair<int, int>> all_cells(const Matrix& m) {
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) cells.emplace_back(i, j);
  return cells;
}

}  // namespace

TEST_CASE("matmul identity and zeros") {
  Rng rng(1);
  Matrix m = random_matrix(3, 5, rng);
  Matrix out = matmul(Matrix::identity(3), m);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(out.data[i] == m.data[i]);

  Matrix z = matmul(Matrix::zeros(2, 3), random_matrix(3, 4, rng));
  CHECK(z.rows == 2);
  CHECK(z.cols == 4);
  for (double x : z.data) CHECK(x == 0.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  Rng rng(7);
  Matrix a = random_matrix(4, 4, rng);
  Matrix b = random_matrix(4, 4, rng);
  Matrix c = matmul(a, b);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("matmul rejects mismatched shapes with a diagnostic") {
  Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("softmax of a uniform row is uniform") {
  Matrix m(1, 4);
  Matrix s = softmax_rows(m);
  for (double x : s.data) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax survives large logits") {
  Matrix m(1, 2);
  m.at(0, 0) = 1000.0;
  m.at(0, 1) = 0.0;
  Matrix s = softmax_rows(m);
  CHECK(s.all_finite());
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax matches extended-precision oracle on [1,2,3]") {
  Matrix m(1, 3);
  m.at(0, 0) = 1.0;
  m.at(0, 1) = 2.0;
  m.at(0, 2) = 3.0;
  Matrix s = softmax_rows(m);
  // Frozen from a 40-digit mpmath evaluation.
  CHECK(std::abs(s.at(0, 0) - 0.09003057317038046) < 1e-15);
  CHECK(std::abs(s.at(0, 1) - 0.24472847105479764) < 1e-15);
  CHECK(std::abs(s.at(0, 2) - 0.6652409557748219) < 1e-15);
}

TEST_CASE("softmax rows sum to one and preserve input order") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m = random_matrix(3, 6, rng, 3.0);
    Matrix s = softmax_rows(m);
    for (int i = 0; i < s.rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < s.cols; ++j) sum += s.at(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
      for (int j = 0; j < s.cols; ++j)
        for (int k = 0; k < s.cols; ++k)
          if (m.at(i, j) > m.at(i, k)) CHECK(s.at(i, j) > s.at(i, k));
    }
  }
}

TEST_CASE("softmax is shift invariant, bit-exact on representable inputs") {
  // Inputs picked so that x + c is exact in binary floating point.
  Matrix m(1, 4);
  m.at(0, 0) = 0.25;
  m.at(0, 1) = -1.5;
  m.at(0, 2) = 2.0;
  m.at(0, 3) = 0.75;
  Matrix shifted = m;
  for (auto& x : shifted.data) x += 8.0;
  Matrix a = softmax_rows(m);
  Matrix b = softmax_rows(shifted);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("constant loss yields exact zero gradients") {
  GradTape tape;
  Var theta = tape.leaf(Matrix::full(2, 2, 1.5), true);
  Var sum = tape.select_sum(theta, all_cells(tape.value(theta)));
  Var loss = tape.affine(sum, 0.0, 5.0);  // constant
  tape.backward(loss);
  for (double g : tape.grad(theta).data) CHECK(g == 0.0);
}

TEST_CASE("sum of squares has gradient 2*theta") {
  Rng rng(3);
  GradTape tape;
  Matrix init = random_matrix(1, 6, rng);
  Var theta = tape.leaf(init, true);
  Var loss = tape.matmul_nt(theta, theta);
  tape.backward(loss);
  const Matrix& g = tape.grad(theta);
  for (int j = 0; j < 6; ++j)
    CHECK(g.at(0, j) == doctest::Approx(2.0 * init.at(0, j)).epsilon(1e-14));
}

TEST_CASE("non-participating leaves get exact zero gradient") {
  GradTape tape;
  Var used = tape.leaf(Matrix::full(1, 3, 2.0), true);
  Var unused = tape.leaf(Matrix::full(1, 3, 4.0), true);
  Var loss = tape.matmul_nt(used, used);
  tape.backward(loss);
  for (double g : tape.grad(unused).data) CHECK(g == 0.0);
}

namespace {

// Builds the loss for one primitive under test, from the current contents of
// the parameter matrices. Reduction mixes cells with fixed non-uniform
// weights so softmax-like ops do not collapse to a constant.
double primitive_loss(int which, const std::vector<Matrix>& params,
                      const Matrix& mixer, std::vector<Matrix>* grads) {
  GradTape tape;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
  Var out;
  switch (which) {
    case 0: out = tape.matmul(leaves[0], leaves[1]); break;
    case 1: out = tape.matmul_nt(leaves[0], leaves[1]); break;
    case 2: out = tape.add(leaves[0], leaves[1]); break;
    case 3: out = tape.add_n({leaves[0], leaves[1], leaves[0]}); break;
    case 4: out = tape.affine(leaves[0], -1.75, 0.25); break;
    case 5: out = tape.add_row(leaves[0], leaves[1]); break;
    case 6: out = tape.row_softmax(leaves[0]); break;
    case 7: out = tape.row_log_softmax(leaves[0]); break;
    case 8: out = tape.gelu(leaves[0]); break;
    case 9: out = tape.rms_norm(leaves[0], leaves[1]); break;
    case 10: out = tape.gather_rows(leaves[0], {0, 2, 1, 2}); break;
    case 11: out = tape.slice_cols(leaves[0], 1, 2); break;
    case 12: out = tape.concat_cols({leaves[0], leaves[1]}); break;
    case 13: out = tape.softplus(leaves[0]); break;
    default: REQUIRE(false);
  }
  Var mixed = tape.matmul(out, tape.leaf(mixer, false));
  Var loss = tape.select_sum(mixed, all_cells(tape.value(mixed)));
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (std::size_t i = 0; i < leaves.size(); ++i)
      grads->push_back(tape.grad(leaves[i]));
  }
  return tape.scalar(loss);
}

}  // namespace

TEST_CASE("every primitive passes the finite-difference check, 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int which = static_cast<int>(seed % 14);
    Rng rng(derive_seed(900, seed));
    const int r = rng.uniform_int(2, 4);
    const int c = rng.uniform_int(2, 4);

    std::vector<Matrix> params;
    int out_cols = c;
    switch (which) {
      case 0:  // matmul
        params = {random_matrix(r, c, rng), random_matrix(c, 3, rng)};
        out_cols = 3;
        break;
      case 1:  // matmul_nt
        params = {random_matrix(r, c, rng), random_matrix(3, c, rng)};
        out_cols = 3;
        break;
      case 5:  // add_row
        params = {random_matrix(r, c, rng), random_matrix(1, c, rng)};
        break;
      case 9:  // rms_norm
        params = {random_matrix(r, c, rng), random_matrix(1, c, rng)};
        break;
      case 10:  // gather_rows
        params = {random_matrix(3, c, rng)};
        break;
      case 11:  // slice_cols
        params = {random_matrix(r, 4, rng)};
        out_cols = 2;
        break;
      case 12:  // concat_cols
        params = {random_matrix(r, c, rng), random_matrix(r, 2, rng)};
        out_cols = c + 2;
        break;
      case 4:
      case 6:
      case 7:
      case 8:
      case 13:
        params = {random_matrix(r, c, rng)};
        break;
      default:  // add, add_n
        params = {random_matrix(r, c, rng), random_matrix(r, c, rng)};
        break;
    }
    Matrix mixer = random_matrix(out_cols, 1, rng);

    std::vector<Matrix> analytic;
    primitive_loss(which, params, mixer, &analytic);

    std::vector<Matrix*> param_ptrs;
    std::vector<const Matrix*> grad_ptrs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      param_ptrs.push_back(&params[i]);
      grad_ptrs.push_back(&analytic[i]);
    }
    auto loss = [&]() { return primitive_loss(which, params, mixer, nullptr); };
    GradCheckReport rep = finite_diff_check(loss, param_ptrs, grad_ptrs, 1e-5, 200,
                                            derive_seed(901, seed));
    INFO("primitive ", which, " seed ", seed, " err ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite_diff_check is near-exact on a quadratic") {
  Rng rng(5);
  Matrix theta = random_matrix(2, 5, rng);
  auto loss = [&]() {
    double acc = 0.0;
    for (double x : theta.data) acc += x * x;
    return acc;
  };
  Matrix analytic(2, 5);
  for (std::size_t i = 0; i < theta.size(); ++i) analytic.data[i] = 2.0 * theta.data[i];
  GradCheckReport rep = finite_diff_check(loss, {&theta}, {&analytic}, 1e-5, 200, 42);
  CHECK(rep.checked == 10);
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("finite_diff_check skips all coordinates of a constant loss") {
  Matrix theta(3, 3);
  Matrix analytic(3, 3);
  auto loss = [&]() { return 1.0; };
  GradCheckReport rep = finite_diff_check(loss, {&theta}, {&analytic}, 1e-5, 200, 42);
  CHECK(rep.checked == 0);
  CHECK(rep.skipped == 9);
}

TEST_CASE("finite_diff_check rejects non-positive h") {
  Matrix theta(1, 1), analytic(1, 1);
  auto loss = [&]() { return 0.0; };
  CHECK_THROWS_AS(finite_diff_check(loss, {&theta}, {&analytic}, 0.0, 10, 1),
                  ShapeError);
}

TEST_CASE("identical seeds give bit-identical results") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Matrix a = random_matrix(8, 8, rng);
    Matrix b = random_matrix(8, 8, rng);
    Matrix c = softmax_rows(matmul(a, b));
    Matrix flat(1, static_cast<int>(c.size()));
    flat.data = c.data;
    GradTape tape;
    Var x = tape.leaf(flat, true);
    Var loss = tape.matmul_nt(x, x);
    tape.backward(loss);
    Matrix g = tape.grad(x);
    g.data.push_back(tape.scalar(loss));
    return g;
  };
  Matrix first = run(123);
  Matrix second = run(123);
  CHECK(first.data.size() == second.data.size());
  CHECK(std::memcmp(first.data.data(), second.data.data(),
                    first.data.size() * sizeof(double)) == 0);
}
