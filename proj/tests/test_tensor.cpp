#include <catch2/catch_amalgamated.hpp>

#include "stuq/rng.hpp"
#include "stuq/tensor.hpp"

using namespace stuq;

TEST_CASE("shape basics", "[tensor]") {
  Shape s{2, 3, 4};
  CHECK(s.rank() == 3);
  CHECK(s.numel() == 24);
  CHECK(s.str() == "(2,3,4)");

  Shape scalar{};
  CHECK(scalar.rank() == 0);
  CHECK(scalar.numel() == 1);

  CHECK(Shape({2, 3}) == Shape({2, 3}));
  CHECK_FALSE(Shape({2, 3}) == Shape({3, 2}));
}

TEST_CASE("shape rejects non-positive dims", "[tensor]") {
  CHECK_THROWS_AS(Shape({2, 0}), ValidationError);
  CHECK_THROWS_AS(Shape({-1}), ValidationError);
}

TEST_CASE("tensor constructors and indexing", "[tensor]") {
  Tensor z = Tensor::zeros(Shape{2, 2});
  CHECK(z.numel() == 4);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(z[i] == 0.0);

  Tensor s = Tensor::scalar(3.5);
  CHECK(s.is_scalar());
  CHECK(s[0] == 3.5);

  Tensor m = Tensor::zeros(Shape{2, 3});
  m.at2(1, 2) = 7.0;
  CHECK(m[5] == 7.0);

  Tensor c = Tensor::zeros(Shape{2, 3, 4});
  c.at3(1, 2, 3) = 9.0;
  CHECK(c[23] == 9.0);

  Tensor k = Tensor::zeros(Shape{2, 2, 2, 2});
  k.at4(1, 1, 1, 1) = 4.0;
  CHECK(k[15] == 4.0);
}

TEST_CASE("random fills stay in range", "[tensor]") {
  Rng rng(12345);
  Tensor u = Tensor::uniform(Shape{100}, -0.5, 0.5, rng);
  for (std::int64_t i = 0; i < 100; ++i) {
    CHECK(u[i] >= -0.5);
    CHECK(u[i] < 0.5);
  }
  Tensor n = Tensor::normal(Shape{1000}, 2.0, 0.1, rng);
  double mean = 0.0;
  for (std::int64_t i = 0; i < 1000; ++i) mean += n[i];
  mean /= 1000.0;
  CHECK(std::fabs(mean - 2.0) < 0.05);
}

TEST_CASE("finiteness and norms", "[tensor]") {
  Tensor t = Tensor::zeros(Shape{3});
  t.data = {3.0, 4.0, 0.0};
  CHECK(t.all_finite());
  CHECK(t.l2_norm() == Catch::Approx(5.0));
  t.data[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("dot product", "[tensor]") {
  Tensor a = Tensor::zeros(Shape{3});
  Tensor b = Tensor::zeros(Shape{3});
  a.data = {1.0, 2.0, 3.0};
  b.data = {4.0, 5.0, 6.0};
  CHECK(dot(a, b) == 32.0);
}
