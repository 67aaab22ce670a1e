#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "idlora/errors.hpp"
#include "idlora/matrix.hpp"
#include "testutil.hpp"

using namespace idlora;

TEST_CASE("from_data validates size and finiteness") {
  CHECK_NOTHROW(Matrix::from_data(2, 2, {1.0, 2.0, 3.0, 4.0}));
  CHECK_THROWS_AS(Matrix::from_data(2, 2, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Matrix::from_data(1, 2, {1.0, std::nan("")}), ParameterError);
  CHECK_THROWS_AS(Matrix::from_data(1, 1, {INFINITY}), ParameterError);
}

TEST_CASE("identity times anything is a no-op") {
  const Matrix m = testutil::random_matrix(3, 5, 42);
  CHECK(matmul(Matrix::identity(3), m) == m);
}

TEST_CASE("2x2 times column vector") {
  // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
  const Matrix a = Matrix::from_data(2, 2, {1, 2, 3, 4});
  const Matrix ones = Matrix::from_data(2, 1, {1, 1});
  const Matrix p = matmul(a, ones);
  CHECK(p(0, 0) == 3.0);
  CHECK(p(1, 0) == 7.0);
}

TEST_CASE("matmul is associative") {
  const Matrix a = testutil::random_matrix(4, 3, 1);
  const Matrix b = testutil::random_matrix(3, 5, 2);
  const Matrix c = testutil::random_matrix(5, 2, 3);
  CHECK(testutil::max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-10);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matvec(Matrix(2, 3), std::vector<double>(2)), ShapeError);
}

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Matrix(3, 4)) == 0.0);
  CHECK(frobenius_norm(Matrix::from_data(1, 2, {3, 4})) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("transpose round trip and shape") {
  const Matrix m = testutil::random_matrix(3, 5, 7);
  const Matrix t = transpose(m);
  CHECK(t.rows() == 5);
  CHECK(t.cols() == 3);
  CHECK(transpose(t) == m);
  CHECK(t(2, 1) == m(1, 2));
}

TEST_CASE("add, sub and scaled") {
  const Matrix a = testutil::random_matrix(2, 3, 1);
  const Matrix b = testutil::random_matrix(2, 3, 2);
  CHECK(testutil::max_abs_diff(sub(add(a, b), b), a) < 1e-15);
  CHECK(testutil::max_abs_diff(scaled(a, 2.0), add(a, a)) == 0.0);
  CHECK_THROWS_AS(add(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matvec and dot agree with manual expansion") {
  const Matrix m = Matrix::from_data(2, 3, {1, 2, 3, 4, 5, 6});
  const std::vector<double> v{1, 0, -1};
  const std::vector<double> u = matvec(m, v);
  CHECK(u == std::vector<double>{-2, -2});
  CHECK(dot(v, v) == 2.0);
}

TEST_CASE("take_rows and take_cols copy verbatim in the given order") {
  const Matrix m = testutil::random_matrix(4, 3, 9);
  const std::vector<std::size_t> idx{2, 0};
  const Matrix r = take_rows(m, idx);
  CHECK(r.rows() == 2);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(r(0, j) == m(2, j));
    CHECK(r(1, j) == m(0, j));
  }
  const Matrix c = take_cols(m, idx);
  CHECK(c.cols() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(c(i, 0) == m(i, 2));
    CHECK(c(i, 1) == m(i, 0));
  }
  CHECK_THROWS_AS(take_rows(m, std::vector<std::size_t>{4}), IndexError);
}
