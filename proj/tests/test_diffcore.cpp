#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "prefrl/diffcore/adam.hpp"
#include "prefrl/diffcore/checkpoint.hpp"
#include "prefrl/diffcore/mlp.hpp"
#include "prefrl/diffcore/tape.hpp"
#include "support.hpp"

using namespace prefrl::diffcore;
using testing::random_tensor;

TEST_SUITE("diffcore") {

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS(Tensor::zeros(2, 2).item());
  Tensor bad = Tensor::zeros(1, 2);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("identity layer passes input through") {
  Layer l{Parameter(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})), Parameter(Tensor::zeros(1, 3)),
          Activation::identity};
  Mlp net({l});
  const Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 0.5, 0.25, -4});
  CHECK(net.forward(x) == x);
}

TEST_CASE("zero weights broadcast the bias") {
  Layer l{Parameter(Tensor::zeros(4, 2)), Parameter(Tensor::matrix(1, 2, {0.3, -0.7})), Activation::identity};
  Mlp net({l});
  std::mt19937_64 rng(3);
  const Tensor y = net.forward(random_tensor(5, 4, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(y(i, 0) == 0.3);
    CHECK(y(i, 1) == -0.7);
  }
}

TEST_CASE("mlp forward matches straight-line arithmetic") {
  std::mt19937_64 rng(11);
  Mlp net({3, 5, 2}, Activation::tanh, Activation::identity, rng);
  const Tensor x = random_tensor(4, 3, rng);
  const Tensor y = net.forward(x);
  const auto& L = net.layers();
  for (std::size_t b = 0; b < 4; ++b) {
    double h[5];
    for (std::size_t j = 0; j < 5; ++j) {
      double s = L[0].bias.value[j];
      for (std::size_t i = 0; i < 3; ++i) s += x(b, i) * L[0].weight.value(i, j);
      h[j] = std::tanh(s);
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double s = L[1].bias.value[k];
      for (std::size_t j = 0; j < 5; ++j) s += h[j] * L[1].weight.value(j, k);
      CHECK(y(b, k) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  // The taped path computes the same values.
  Tape tape;
  Var out = net.forward(tape, tape.constant(x));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(out.value()[i] == doctest::Approx(y[i]).epsilon(1e-14));
}

TEST_CASE("mlp rejects mismatched input width") {
  std::mt19937_64 rng(1);
  Mlp net({3, 2}, Activation::tanh, Activation::identity, rng);
  CHECK_THROWS_AS(net.forward(Tensor::zeros(2, 4)), ShapeError);
  Layer a{Parameter(Tensor::zeros(3, 4)), Parameter(Tensor::zeros(1, 4)), Activation::relu};
  Layer b{Parameter(Tensor::zeros(5, 1)), Parameter(Tensor::zeros(1, 1)), Activation::identity};
  CHECK_THROWS_AS(Mlp({a, b}), ShapeError);
}

TEST_CASE("sum and square have the analytic gradients") {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor(3, 4, rng);
  {
    Tape tape;
    Var x = tape.input(x0);
    tape.backward(sum(x));
    for (double g : x.grad().values()) CHECK(g == 1.0);
  }
  {
    Tape tape;
    Var x = tape.input(x0);
    tape.backward(sum(square(x)));
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x0[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward contract") {
  Tape tape;
  Var x = tape.input(Tensor::zeros(2, 2));
  CHECK_THROWS_AS(tape.backward(x), BackwardError);  // not scalar
  Var loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), BackwardError);  // second sweep
  Var c = tape.constant(Tensor::zeros(1, 1));
  CHECK_THROWS(c.grad());
}

TEST_CASE("shared inputs accumulate gradients") {
  Tape tape;
  Var x = tape.input(Tensor::matrix(1, 2, {2.0, -3.0}));
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
  tape.backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("vectorized tanh tracks the library tanh") {
  std::vector<double> x{0.0, -0.0, 1e-300, -3e-9, 0.0099, 0.01, -0.5, 2.0, 19.0, -40.0, 710.0,
                        std::numeric_limits<double>::infinity()};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 2000; ++i) x.push_back(n(rng));
  std::vector<double> y(x.size());
  tanh_into(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ref = std::tanh(x[i]);
    CHECK(std::abs(y[i] - ref) <= 1e-14 * std::abs(ref));
  }
  const double nan[1] = {std::nan("")};
  double out[1];
  tanh_into(nan, out);
  CHECK(std::isnan(out[0]));
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a0 = random_tensor(3, 4, rng);
    Tensor b0 = random_tensor(4, 2, rng);
    Tensor c0 = random_tensor(3, 4, rng);
    Tensor row0 = random_tensor(1, 2, rng);
    Tensor pos0 = random_tensor(3, 4, rng);
    for (auto& v : pos0.values()) v = 0.5 + std::abs(v);

    auto build = [&](Tape& t, Var& a, Var& b, Var& c, Var& row, Var& pos) {
      a = t.input(a0);
      b = t.input(b0);
      c = t.input(c0);
      row = t.input(row0);
      pos = t.input(pos0);
      Var m = add_row(matmul(tanh(a), b), row);           // 3x2
      Var soft = log_softmax(reshape(m, 2, 3));             // 2x3
      Var e = mul(exp(scale(c, 0.3)), relu(sub(a, c)));     // 3x4
      Var l = log(pos);
      Var g = gather_rows(tanh(a), {2, 0, 2, 1, 2});         // 5x4, repeated rows
      return add(add(add(mean(soft), sum(e)), add(mean(square(l)), sum(scale(m, 0.1)))), sum(square(g)));
    };
    Tape tape;
    Var a, b, c, row, pos;
    tape.backward(build(tape, a, b, c, row, pos));
    std::vector<Tensor> analytic{a.grad(), b.grad(), c.grad(), row.grad(), pos.grad()};
    auto value = [&] {
      Tape t;
      Var a2, b2, c2, r2, p2;
      return build(t, a2, b2, c2, r2, p2).value().item();
    };
    const auto res = testing::finite_difference_check({&a0, &b0, &c0, &row0, &pos0}, analytic, value);
    CHECK(res.failed == 0);
  }
}

TEST_CASE("mlp parameter gradients match central differences") {
  std::mt19937_64 rng(7);
  for (auto act : {Activation::tanh, Activation::relu}) {
    Mlp net({4, 6, 3}, act, Activation::identity, rng);
    const Tensor x = random_tensor(5, 4, rng);
    const Tensor target = random_tensor(5, 3, rng);
    auto loss_value = [&] {
      Tape t;
      return mean(square(sub(net.forward(t, t.constant(x)), t.constant(target)))).value().item();
    };
    auto params = net.parameters();
    zero_grad(params);
    Tape tape;
    tape.backward(mean(square(sub(net.forward(tape, tape.constant(x)), tape.constant(target)))));
    std::vector<Tensor*> values;
    std::vector<Tensor> grads;
    for (auto* p : params) {
      values.push_back(&p->value);
      grads.push_back(p->grad);
    }
    CHECK(testing::finite_difference_check(values, grads, loss_value).failed == 0);
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(9);
  Mlp net({3, 4, 1}, Activation::tanh, Activation::identity, rng);
  const Tensor x = random_tensor(6, 3, rng);
  auto params = net.parameters();
  auto grads_of = [&](double a, double b) {
    zero_grad(params);
    Tape t;
    Var y = net.forward(t, t.constant(x));
    Var l1 = sum(square(y));
    Var l2 = mean(tanh(y));
    t.backward(add(scale(l1, a), scale(l2, b)));
    std::vector<double> g;
    for (auto* p : params) g.insert(g.end(), p->grad.values().begin(), p->grad.values().end());
    return g;
  };
  const auto g1 = grads_of(1.0, 0.0);
  const auto g2 = grads_of(0.0, 1.0);
  const auto mix = grads_of(2.5, -0.75);
  for (std::size_t i = 0; i < mix.size(); ++i) CHECK(mix[i] == doctest::Approx(2.5 * g1[i] - 0.75 * g2[i]).epsilon(1e-12));
}

TEST_CASE("log_softmax is stable for large logits") {
  Tape tape;
  Var x = tape.input(Tensor::matrix(1, 2, {1000.0, 0.0}));
  Var l = log_softmax(x);
  CHECK(l.value()[0] == doctest::Approx(0.0));
  CHECK(l.value()[1] == doctest::Approx(-1000.0));
  tape.backward(sum(l));
  CHECK(x.grad().all_finite());
}

TEST_CASE("adam step behaviour") {
  SUBCASE("zero gradient leaves parameters unchanged but counts the step") {
    Parameter p(Tensor::matrix(1, 2, {1.0, -2.0}));
    Adam opt;
    CHECK(opt.step({&p}) == StepStatus::applied);
    CHECK(opt.step_count() == 1);
    CHECK(p.value[0] == 1.0);
    CHECK(p.value[1] == -2.0);
  }
  SUBCASE("descends on theta^2") {
    Parameter p(Tensor::scalar(1.0));
    Adam opt(AdamConfig{0.01});
    Tape t;
    t.backward(square(t.parameter(p)));
    opt.step({&p});
    CHECK(std::abs(p.value.item()) < 1.0);
  }
  SUBCASE("non-finite gradient is rejected") {
    Parameter p(Tensor::scalar(1.0));
    p.grad[0] = std::numeric_limits<double>::infinity();
    Adam opt;
    CHECK(opt.step({&p}) == StepStatus::rejected_non_finite);
    CHECK(opt.step_count() == 0);
    CHECK(opt.rejected_count() == 1);
    CHECK(p.value.item() == 1.0);
  }
}

TEST_CASE("seeded training is bit-identical") {
  auto train = [] {
    std::mt19937_64 rng(123);
    Mlp net({3, 8, 1}, Activation::tanh, Activation::identity, rng);
    const Tensor x = random_tensor(16, 3, rng);
    Adam opt;
    auto params = net.parameters();
    for (int s = 0; s < 25; ++s) {
      zero_grad(params);
      Tape t;
      t.backward(mean(square(net.forward(t, t.constant(x)))));
      opt.step(params);
    }
    std::vector<double> flat;
    for (auto* p : params) flat.insert(flat.end(), p->value.values().begin(), p->value.values().end());
    return flat;
  };
  const auto a = train();
  const auto b = train();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoint binary round trip is bit-exact") {
  std::mt19937_64 rng(77);
  Mlp net({5, 7, 2}, Activation::relu, Activation::tanh, rng);
  Checkpoint ckpt;
  append_mlp(ckpt, "net", net);
  ckpt.meta["note"] = "round trip";
  const auto path = std::filesystem::temp_directory_path() / "prefrl_ckpt_test.bin";
  save_binary(path, ckpt);
  const Checkpoint back = load_binary(path);
  std::filesystem::remove(path);
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ckpt.tensors[i].first);
    CHECK(std::memcmp(back.tensors[i].second.data(), ckpt.tensors[i].second.data(),
                      ckpt.tensors[i].second.size() * sizeof(double)) == 0);
  }
  const Mlp restored = mlp_from_checkpoint(back, "net");
  const Tensor x = random_tensor(3, 5, rng);
  CHECK(restored.forward(x) == net.forward(x));

  std::stringstream junk("not a checkpoint");
  CHECK_THROWS(read_binary(junk));
}

}  // TEST_SUITE
