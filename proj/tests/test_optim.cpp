#include <cmath>

#include "bat/optim.hpp"
#include "doctest.h"

using namespace bat;

TEST_CASE("one AdamW step on a quadratic") {
  // p0 = 1, loss = p^2, g = 2p. With bias correction m_hat = g and
  // v_hat = g^2, so the step is lr * g / (|g| + eps) plus decay.
  Tensor p = Tensor::from({1}, {1.0});
  p.ensure_grad();
  p.grad[0] = 2.0;
  AdamW opt({&p}, 0.1, 0.0, 0.9, 0.999, 1e-8);
  opt.step();
  CHECK(p.data[0] == doctest::Approx(1.0 - 0.1 * (2.0 / (2.0 + 1e-8))).epsilon(1e-16));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("two steps with decoupled decay") {
  Tensor p = Tensor::from({1}, {1.0});
  AdamW opt({&p}, 0.1, 0.4, 0.9, 0.999, 1e-8);

  p.ensure_grad();
  p.grad[0] = 2.0 * p.data[0];
  opt.step();
  CHECK(p.data[0] == doctest::Approx(0.8600000005).epsilon(1e-12));

  opt.zero_grad();
  p.grad[0] = 2.0 * p.data[0];
  opt.step();
  CHECK(p.data[0] == doctest::Approx(0.7262733880478865).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Tensor p = Tensor::from({3}, {0.5, -1.25, 3.75});
  std::vector<double> before = p.data;
  p.ensure_grad();
  p.grad = {10.0, -3.0, 0.25};
  AdamW opt({&p}, 0.0, 0.1, 0.9, 0.999, 1e-8);
  opt.step();
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.data[i] == before[i]);
}

TEST_CASE("missing grad acts as zero, decay still applies") {
  Tensor p = Tensor::from({2}, {2.0, -2.0});
  AdamW opt({&p}, 0.5, 0.1, 0.9, 0.999, 1e-8);
  opt.step();  // m = v = 0 -> pure decay: p -= lr * wd * p
  CHECK(p.data[0] == doctest::Approx(2.0 * (1.0 - 0.05)).epsilon(1e-15));
  CHECK(p.data[1] == doctest::Approx(-2.0 * (1.0 - 0.05)).epsilon(1e-15));
}

TEST_CASE("independent state per tensor") {
  Tensor a = Tensor::from({1}, {1.0});
  Tensor b = Tensor::from({1}, {1.0});
  a.ensure_grad();
  b.ensure_grad();
  a.grad[0] = 1.0;
  b.grad[0] = -1.0;
  AdamW opt({&a, &b}, 0.1, 0.0, 0.9, 0.999, 1e-8);
  opt.step();
  CHECK(a.data[0] == doctest::Approx(1.0 - 0.1 * (1.0 / (1.0 + 1e-8))));
  CHECK(b.data[0] == doctest::Approx(1.0 + 0.1 * (1.0 / (1.0 + 1e-8))));
}
