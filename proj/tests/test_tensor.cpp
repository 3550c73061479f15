#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "msp/tensor.hpp"

using namespace msp;

TEST_CASE("shape count and formatting") {
  Shape s{2, 3, 4, 5};
  CHECK(s.count() == 120);
  CHECK(s.str() == "(2,3,4,5)");
}

TEST_CASE("tensor construction, indexing and clone") {
  Tensor t(Shape{1, 2, 2, 2}, 3.0);
  CHECK(t.size() == 8);
  CHECK(t.at(0, 1, 1, 1) == 3.0);
  t.at(0, 0, 0, 1) = -1.0;
  Tensor shallow = t;
  CHECK(shallow.same_storage(t));
  Tensor deep = t.clone();
  CHECK_FALSE(deep.same_storage(t));
  deep.at(0, 0, 0, 1) = 42.0;
  CHECK(t.at(0, 0, 0, 1) == -1.0);

  Tensor s = Tensor::scalar(2.5);
  CHECK(s.value() == 2.5);
  CHECK_THROWS_AS((void)t.value(), Error);  // value() only for scalars
}

TEST_CASE("tape backward requires scalar loss and single use") {
  Tape tape;
  Tensor x(Shape{1, 1, 2, 2}, 1.0);
  CHECK_THROWS_AS(tape.backward(x), Error);

  Tensor s = Tensor::scalar(1.0);
  s.set_requires_grad(true);
  tape.record([] {});
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), Error);  // consumed; needs clear()
  tape.clear();
  CHECK_THROWS_AS(tape.backward(s), Error);  // empty tape
  tape.record([] {});
  tape.backward(s);  // fine again after clear + re-record
}

TEST_CASE("model params reject duplicates and mark trainable") {
  ModelParams p;
  Tensor& t = p.add("a.w", Tensor(Shape{1, 1, 1, 1}));
  CHECK(t.requires_grad());
  CHECK(p.contains("a.w"));
  CHECK_THROWS_AS(p.add("a.w", Tensor(Shape{1, 1, 1, 1})), Error);
  CHECK_THROWS_AS(p.at("missing"), Error);
}

TEST_CASE("sgd step matches the hand-computed update") {
  ModelParams p;
  Tensor& w = p.add("w", Tensor(Shape{1, 1, 1, 2}));
  w.data()[0] = 1.0;
  w.data()[1] = -2.0;
  w.grad()[0] = 0.5;
  w.grad()[1] = -1.0;

  SgdOptimizer opt;
  // v = -lr*(g + wd*p); p += v
  opt.step(p, 0.1, 0.9, 0.01);
  const double v0 = -0.1 * (0.5 + 0.01 * 1.0);
  const double v1 = -0.1 * (-1.0 + 0.01 * -2.0);
  CHECK(w.data()[0] == doctest::Approx(1.0 + v0).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(-2.0 + v1).epsilon(1e-12));
  CHECK(w.grad_data()[0] == 0.0);  // grads cleared after the step

  // Second step applies momentum to the stored velocity.
  w.grad()[0] = 0.0;
  w.grad()[1] = 0.0;
  const double p0 = w.data()[0];
  opt.step(p, 0.1, 0.9, 0.0);
  CHECK(w.data()[0] == doctest::Approx(p0 + 0.9 * v0).epsilon(1e-12));
}

TEST_CASE("sgd with zero lr and momentum leaves params untouched") {
  ModelParams p;
  Tensor& w = p.add("w", Tensor(Shape{1, 1, 1, 3}, 1.5));
  w.grad()[0] = 123.0;
  SgdOptimizer opt;
  opt.step(p, 0.0, 0.0, 0.5);
  for (int i = 0; i < 3; ++i) CHECK(w.data()[i] == 1.5);
}

TEST_CASE("mspt container round-trips bit-exactly") {
  Rng rng(99);
  Tensor t(Shape{2, 3, 5, 7});
  fill_uniform(t, rng, -1e6, 1e6);
  std::stringstream ss;
  write_mspt(ss, t);
  Tensor back = read_mspt(ss);
  REQUIRE(back.shape() == t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);
}

TEST_CASE("mspt rejects bad magic and truncation") {
  std::stringstream bad("XXXX garbage");
  CHECK_THROWS_AS(read_mspt(bad), DataError);

  Tensor t(Shape{1, 1, 2, 2}, 1.0);
  std::stringstream ss;
  write_mspt(ss, t);
  std::string full = ss.str();
  std::stringstream cut(full.substr(0, full.size() - 4));
  CHECK_THROWS_AS(read_mspt(cut), DataError);
}

TEST_CASE("fill_normal and fill_uniform are seed-deterministic") {
  Rng a(5), b(5);
  Tensor ta(Shape{1, 1, 4, 4}), tb(Shape{1, 1, 4, 4});
  fill_normal(ta, a, 0.1);
  fill_normal(tb, b, 0.1);
  for (std::int64_t i = 0; i < ta.size(); ++i) CHECK(ta.data()[i] == tb.data()[i]);
}

TEST_CASE("MSP_THREADS env var caps worker threads") {
  ::setenv("MSP_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  ::unsetenv("MSP_THREADS");
  CHECK(worker_threads() >= 1);
}
