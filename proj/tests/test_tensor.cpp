// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "doctest.h"

#include "cvlm/ops.hpp"
#include "cvlm/tensor.hpp"

using namespace cvlm;

TEST_CASE("construction and element access") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  CHECK(z.numel() == 6);
  CHECK(z.at(1, 2) == 0.0);

  Tensor f = Tensor::full({2, 2}, 1.5);
  CHECK(f.at(0, 0) == 1.5);
  CHECK(f.at(1, 1) == 1.5);

  Tensor v = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  CHECK(v.at(0, 1) == 2.0);
  CHECK(v.at(1, 0) == 3.0);

  Tensor s = Tensor::scalar(7.0);
  CHECK(s.value() == 7.0);
  CHECK(s.numel() == 1);
}

TEST_CASE("from_vector rejects mismatched payload") {
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("value() requires a scalar") {
  CHECK_THROWS_AS(Tensor::zeros({2, 2}).value(), ShapeError);
}

TEST_CASE("copies alias the same buffer") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = a;
  b.at(0, 0) = 5.0;
  CHECK(a.at(0, 0) == 5.0);
  CHECK(a.buffer() == b.buffer());
}

TEST_CASE("zero-row shapes are valid") {
  Tensor e = Tensor::zeros({0, 4});
  CHECK(e.rows() == 0);
  CHECK(e.cols() == 4);
  CHECK(e.numel() == 0);
}

TEST_CASE("leaves track only when trainable") {
  Tensor w = Tensor::zeros({2, 2});
  CHECK(!w.tracked());
  w.make_leaf(true);
  CHECK(w.tracked());

  Tensor frozen = Tensor::zeros({2, 2});
  frozen.make_leaf(false);
  CHECK(!frozen.tracked());
}

TEST_CASE("backward accumulates through a diamond") {
  // y = (w + w) * w  =>  dy/dw = 4w  (elementwise), summed via scalarizer.
  Tensor w = Tensor::from_vector({1, 2}, {2.0, -3.0});
  w.make_leaf(true);
  Tensor s = ops::add(w, w);
  Tensor y = ops::mul(s, w);
  Tensor ones = Tensor::full({2, 1}, 1.0);
  Tensor loss = ops::matmul(y, ones);
  backward(loss);
  REQUIRE(w.node->grad.size() == 2);
  CHECK(w.node->grad[0] == doctest::Approx(4.0 * 2.0).epsilon(1e-12));
  CHECK(w.node->grad[1] == doctest::Approx(4.0 * -3.0).epsilon(1e-12));
}

TEST_CASE("frozen leaves receive no gradient") {
  Tensor w = Tensor::from_vector({1, 2}, {1.0, 1.0});
  w.make_leaf(true);
  Tensor f = Tensor::from_vector({1, 2}, {3.0, 4.0});
  f.make_leaf(false);
  Tensor y = ops::mul(w, f);
  Tensor ones = Tensor::full({2, 1}, 1.0);
  backward(ops::matmul(y, ones));
  CHECK(w.node->grad[0] == 3.0);
  CHECK(w.node->grad[1] == 4.0);
  CHECK(f.node->grad.empty());
}

TEST_CASE("second backward over the same graph is an error") {
  Tensor w = Tensor::from_vector({1, 1}, {2.0});
  w.make_leaf(true);
  Tensor y = ops::scale(w, 3.0);
  backward(y);
  CHECK_THROWS_AS(backward(y), StaleTapeError);
}

TEST_CASE("backward seed scales the flow") {
  Tensor w = Tensor::from_vector({1, 1}, {5.0});
  w.make_leaf(true);
  Tensor y = ops::scale(w, 2.0);
  backward(y, 10.0);
  CHECK(w.node->grad[0] == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("NoGrad suppresses graph recording") {
  Tensor w = Tensor::from_vector({1, 1}, {1.0});
  w.make_leaf(true);
  CHECK(grad_enabled());
  {
    NoGrad ng;
    CHECK(!grad_enabled());
    Tensor y = ops::scale(w, 2.0);
    CHECK(!y.tracked());
  }
  CHECK(grad_enabled());
  Tensor y = ops::scale(w, 2.0);
  CHECK(y.tracked());
}

TEST_CASE("gradients accumulate across separate backward passes") {
  Tensor w = Tensor::from_vector({1, 1}, {3.0});
  w.make_leaf(true);
  backward(ops::scale(w, 2.0));
  backward(ops::scale(w, 4.0));
  CHECK(w.node->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("shape_str formats dimensions") {
  CHECK(Tensor::zeros({3, 4}).shape_str() == "[3,4]");
}
