#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avger/autograd.hpp"
#include "test_util.hpp"

using namespace avger;
using namespace avger::test;
using nn::GradBuffer;
using nn::Mat;
using nn::Tape;
using nn::Value;

namespace {

/// Finite-difference check: scalar(op(leaf)) gradient vs central differences
/// over every coordinate of the leaf.
void check_grad(const std::function<Value(Tape&, Value)>& op, Mat input,
                double h = 1e-6, double tol = 1e-6) {
  Mat analytic;
  {
    Tape t;
    Value x = t.leaf(input);
    Value y = op(t, x);
    Value s = t.sum(t.cmul(y, t.constant(random_mat(y.rows(), y.cols(), 99, 0.7))));
    GradBuffer gb(0);
    t.backward(s, gb);
    analytic = t.grad_of(x);
  }
  auto eval = [&]() {
    Tape t(false);
    Value x = t.constant(input);
    Value y = op(t, x);
    return t.sum(t.cmul(y, t.constant(random_mat(y.rows(), y.cols(), 99, 0.7)))).val()(0, 0);
  };
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    for (Eigen::Index j = 0; j < input.cols(); ++j) {
      double fd = central_diff(eval, input(i, j), h);
      INFO("coord (", i, ",", j, ") analytic=", analytic(i, j), " fd=", fd);
      CHECK(rel_err(analytic(i, j), fd) < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul forward and gradient") {
  Mat a = random_mat(3, 4, 1), b = random_mat(4, 5, 2);
  Tape t;
  Value va = t.leaf(a), vb = t.leaf(b);
  Value c = t.matmul(va, vb);
  CHECK((c.val() - a * b).norm() == doctest::Approx(0.0));
  check_grad([&](Tape& tt, Value x) { return tt.matmul(x, tt.constant(b)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.matmul(tt.constant(a), x); }, b);
}

TEST_CASE("matmul_nt gradient") {
  Mat a = random_mat(3, 4, 3), b = random_mat(5, 4, 4);
  check_grad([&](Tape& tt, Value x) { return tt.matmul_nt(x, tt.constant(b)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.matmul_nt(tt.constant(a), x); }, b);
}

TEST_CASE("elementwise ops gradients") {
  Mat a = random_mat(4, 3, 5), b = random_mat(4, 3, 6);
  check_grad([&](Tape& tt, Value x) { return tt.add(x, tt.constant(b)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.sub(tt.constant(b), x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.cmul(x, tt.constant(b)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.scale(x, -2.5); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.gelu(x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.cwise_pow(x, 3); }, a);
}

TEST_CASE("row-vector broadcast ops") {
  Mat a = random_mat(5, 3, 7);
  Mat r = random_mat(1, 3, 8).array().abs() + 0.5;
  check_grad([&](Tape& tt, Value x) { return tt.add_rowvec(x, tt.constant(r)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.sub_rowvec(x, tt.constant(r)); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.div_rowvec(x, tt.constant(r)); }, a);
  // gradient w.r.t. the row vector itself
  check_grad([&](Tape& tt, Value x) { return tt.add_rowvec(tt.constant(a), x); }, r);
  check_grad([&](Tape& tt, Value x) { return tt.div_rowvec(tt.constant(a), x); }, r);
}

TEST_CASE("softmax rows: probability rows and gradient") {
  Mat a = random_mat(4, 6, 9);
  Tape t;
  Value p = t.softmax_rows(t.leaf(a));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    CHECK(p.val().row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  check_grad([&](Tape& tt, Value x) { return tt.softmax_rows(x); }, a);
}

TEST_CASE("masked softmax ignores -inf columns") {
  Mat a = random_mat(3, 5, 10);
  Mat bias = Mat::Zero(3, 5);
  bias.col(4).setConstant(-std::numeric_limits<double>::infinity());
  Tape t;
  Value p = t.softmax_rows_biased(t.leaf(a), bias);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(p.val()(i, 4) == 0.0);
    CHECK(p.val().row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  check_grad([&](Tape& tt, Value x) { return tt.softmax_rows_biased(x, bias); }, a);
}

TEST_CASE("log_softmax gradient") {
  Mat a = random_mat(3, 7, 11);
  check_grad([&](Tape& tt, Value x) { return tt.log_softmax_rows(x); }, a);
}

TEST_CASE("layer_norm gradient w.r.t. input, gain, bias") {
  Mat a = random_mat(4, 6, 12);
  Mat g = random_mat(1, 6, 13).array() + 1.5;
  Mat b = random_mat(1, 6, 14);
  check_grad([&](Tape& tt, Value x) {
    return tt.layer_norm(x, tt.constant(g), tt.constant(b));
  }, a, 1e-6, 2e-5);
  check_grad([&](Tape& tt, Value x) {
    return tt.layer_norm(tt.constant(a), x, tt.constant(b));
  }, g);
  check_grad([&](Tape& tt, Value x) {
    return tt.layer_norm(tt.constant(a), tt.constant(g), x);
  }, b);
}

TEST_CASE("gather/select/slice/concat gradients") {
  Mat a = random_mat(6, 5, 15);
  check_grad([&](Tape& tt, Value x) { return tt.gather_rows(x, {0, 3, 3, 5}); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.gather_cols(x, {0, 4, 2, 1, 0, 3}); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.select_cols(x, {4, 0, 0, 2}); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.slice_rows(x, 1, 3); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.slice_cols(x, 2, 2); }, a);
  check_grad([&](Tape& tt, Value x) {
    return tt.concat_rows({tt.slice_rows(x, 0, 2), tt.slice_rows(x, 3, 2)});
  }, a);
  check_grad([&](Tape& tt, Value x) {
    return tt.concat_cols({tt.slice_cols(x, 0, 2), tt.slice_cols(x, 1, 3)});
  }, a);
}

TEST_CASE("im2col_1d matches manual patches and gradient") {
  Mat a = random_mat(7, 2, 16);
  Tape t;
  Value v = t.im2col_1d(t.constant(a), 3, 2, 1, 1);
  // out rows: (7 + 2 - 3)/2 + 1 = 4
  CHECK(v.rows() == 4);
  CHECK(v.cols() == 6);
  // row 0 covers inputs [-1, 0, 1]: first block zero-padded
  CHECK(v.val()(0, 0) == 0.0);
  CHECK(v.val()(0, 2) == a(0, 0));
  check_grad([&](Tape& tt, Value x) { return tt.im2col_1d(x, 3, 2, 1, 1); }, a);
}

TEST_CASE("reductions: colwise mean/min/max, l2_norm, sum") {
  Mat a = random_mat(5, 4, 17);
  check_grad([&](Tape& tt, Value x) { return tt.colwise_mean(x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.colwise_min(x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.colwise_max(x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.l2_norm(x); }, a);
  check_grad([&](Tape& tt, Value x) { return tt.cwise_max_scalar(x, 0.1); }, a);
}

TEST_CASE("parameter gradients flow into GradBuffer") {
  nn::ParameterSet ps;
  auto& w = ps.add("w", 3, 3);
  nn::init_normal(w, 0.5, 42);
  Tape t;
  Value x = t.constant(random_mat(2, 3, 18));
  Value y = t.matmul(x, t.param(w));
  GradBuffer gb(ps.count());
  t.backward(t.sum(y), gb);
  const Mat* g = gb.get(w);
  REQUIRE(g != nullptr);
  Mat expect = x.val().transpose() * Mat::Ones(2, 3);
  CHECK((*g - expect).norm() < 1e-12);
}

TEST_CASE("frozen parameters receive no gradient") {
  nn::ParameterSet ps;
  auto& w = ps.add("w", 2, 2);
  nn::init_normal(w, 0.5, 43);
  w.trainable = false;
  Tape t;
  Value y = t.matmul(t.leaf(random_mat(2, 2, 19)), t.param(w));
  GradBuffer gb(ps.count());
  t.backward(t.sum(y), gb);
  CHECK(gb.get(w) == nullptr);
}

TEST_CASE("same parameter used twice accumulates both paths") {
  nn::ParameterSet ps;
  auto& w = ps.add("w", 2, 2);
  nn::init_normal(w, 0.5, 44);
  Tape t;
  Value p = t.param(w);
  Value y = t.add(t.matmul(p, p), p);
  GradBuffer gb(ps.count());
  t.backward(t.sum(y), gb);
  const Mat* g = gb.get(w);
  REQUIRE(g != nullptr);
  // d/dW sum(W*W + W) = W^T*1 + 1*W^T + 1
  Mat ones = Mat::Ones(2, 2);
  Mat expect = ones * w.value.transpose() + w.value.transpose() * ones + ones;
  CHECK((*g - expect).norm() < 1e-12);
}

TEST_CASE("no-grad tape evaluates but refuses backward") {
  Tape t(false);
  Value y = t.gelu(t.constant(random_mat(2, 2, 20)));
  CHECK(y.rows() == 2);
  GradBuffer gb(0);
  CHECK_THROWS_AS(t.backward(t.sum(y), gb), std::logic_error);
}
