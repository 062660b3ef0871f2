#include <doctest.h>

#include <cmath>

#include "igmmgan/error.hpp"
#include "igmmgan/nn.hpp"
#include "igmmgan/tensor.hpp"

using namespace igmmgan;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Half squared norm against a fixed random target.
LossFn quadratic_loss(const Matrix& target) {
  return [target](const Matrix& out, Matrix& grad) {
    grad = out - target;
    return 0.5 * grad.squaredNorm();
  };
}

}  // namespace

TEST_CASE("dense identity layer passes input through") {
  Rng rng(1);
  Network net("id", {LayerSpec::dense(3, 3)}, rng);
  net.params().find("id.0.weight").value = Matrix::Identity(3, 3);
  net.params().find("id.0.bias").value.setZero();
  const Matrix out = net.forward(row({1, 2, 3}), Mode::train).output;
  CHECK(out == row({1, 2, 3}));
}

TEST_CASE("leaky relu uses slope 0.2") {
  Rng rng(1);
  Network net("act", {LayerSpec::act(2, Activation::leaky_relu)}, rng);
  const Matrix out = net.forward(row({-1, 2}), Mode::train).output;
  CHECK(out(0, 0) == doctest::Approx(-0.2));
  CHECK(out(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("batch norm on {0, 2} gives -1, +1 up to epsilon") {
  Rng rng(1);
  Network net("bn", {LayerSpec::batch_norm(1)}, rng);
  Matrix x(2, 1);
  x << 0, 2;
  const Matrix out = net.forward(x, Mode::train).output;
  const double expected = 1.0 / std::sqrt(1.0 + Network::kBatchNormEpsilon);
  CHECK(out(0, 0) == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(out(1, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("batch norm train output is standardized per feature") {
  Rng rng(5);
  Network net("bn", {LayerSpec::batch_norm(4)}, rng);
  const Matrix x = random_matrix(64, 4, rng, 3.0).array() + 2.0;
  const Matrix out = net.forward(x, Mode::train).output;
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double mean = out.col(j).mean();
    const double var = (out.col(j).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    // Variance is 1 up to the epsilon guard: var_x / (var_x + eps).
    CHECK(std::abs(var - 1.0) < 1e-5 / (x.col(j).array() - x.col(j).mean()).square().mean() + 1e-6);
  }
}

TEST_CASE("eval mode uses running statistics and is pure") {
  Rng rng(2);
  Network net("bn", {LayerSpec::dense(3, 4, false), LayerSpec::batch_norm(4)}, rng);
  const Matrix x = random_matrix(16, 3, rng);
  const Tape t = net.forward(x, Mode::train);
  net.update_running_stats(t);
  const Matrix a = net.predict(x);
  const Matrix b = net.predict(x);
  CHECK(a == b);
  CHECK(!(a - t.output).isZero(1e-6));
  // A single row works in eval mode.
  CHECK(net.predict(x.topRows(1)).rows() == 1);
}

TEST_CASE("forward rejects mismatched width and non-finite values") {
  Rng rng(3);
  Network net("n", {LayerSpec::dense(3, 2)}, rng);
  CHECK_THROWS_AS(net.forward(Matrix::Zero(1, 4), Mode::train), DimensionError);
  net.params().find("n.0.weight").value(0, 0) = std::numeric_limits<double>::infinity();
  try {
    net.forward(row({1, 0, 0}), Mode::eval);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("n layer 0") != std::string::npos);
  }
}

TEST_CASE("sum loss through identity dense layer") {
  Rng rng(1);
  Network net("id", {LayerSpec::dense(3, 3)}, rng);
  net.params().find("id.0.weight").value = Matrix::Identity(3, 3);
  const Matrix x = row({1, 2, 3});
  const Tape tape = net.forward(x, Mode::train);
  net.zero_grad();
  net.backward(tape, Matrix::Ones(1, 3));
  const Matrix& gw = net.params().find("id.0.weight").grad;
  const Matrix& gb = net.params().find("id.0.bias").grad;
  // weight is stored (in x out); dL/dW[i][j] = x_i.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(gw(i, j) == doctest::Approx(x(0, i)));
  }
  CHECK(gb.isOnes());
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  Rng rng(4);
  Network net("n", {LayerSpec::dense(3, 5, false), LayerSpec::batch_norm(5),
                    LayerSpec::act(5, Activation::leaky_relu), LayerSpec::dense(5, 2)},
              rng);
  const Matrix x = random_matrix(8, 3, rng);
  const Tape tape = net.forward(x, Mode::train);
  net.zero_grad();
  net.backward(tape, Matrix::Zero(8, 2));
  for (const auto& p : net.params()) {
    if (p.trainable) CHECK(p.grad.isZero(0.0));
  }
}

TEST_CASE("tensor entry points mirror matrices") {
  Rng rng(9);
  Network net("n", {LayerSpec::dense(2, 2)}, rng);
  const Tensor in({3, 2}, {1, 2, 3, 4, 5, 6});
  const ForwardResult r = forward_pass(net, in, Mode::train);
  CHECK(r.output.shape() == std::vector<std::size_t>{3, 2});
  CHECK(r.output.to_matrix() == net.forward(in.to_matrix(), Mode::train).output);
  net.zero_grad();
  backward_pass(net, r.tape, Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(backward_pass(net, r.tape, Tensor::zeros({3, 3})), DimensionError);
}

TEST_CASE("binary cross entropy closed forms") {
  CHECK(binary_cross_entropy(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(binary_cross_entropy(1 - 1e-7, 1) == doctest::Approx(1e-7).epsilon(1e-3));
  CHECK(binary_cross_entropy(0.9, 0) == doctest::Approx(-std::log(0.1)));
  CHECK(binary_cross_entropy(1.0, 1) > 0.0);
  CHECK(binary_cross_entropy(0.3, 0) >= 0.0);
  CHECK_THROWS_AS(binary_cross_entropy(0.5, 2), ValidationError);
}

TEST_CASE("adam first step moves by about lr") {
  ParamSet ps;
  ps.add("w", Matrix::Constant(1, 1, 1.0));
  Adam adam({0.01, 0.5, 0.999, 1e-8});
  ps[0].grad = Matrix::Constant(1, 1, -3.7);
  ps[0].has_grad = true;
  adam.step({&ps});
  CHECK(ps[0].value(0, 0) == doctest::Approx(1.01).epsilon(1e-6));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam two constant steps move by 2 lr") {
  ParamSet ps;
  ps.add("w", Matrix::Zero(1, 1));
  Adam adam({0.1, 0.5, 0.999, 1e-8});
  for (int i = 0; i < 2; ++i) {
    ps[0].grad = Matrix::Ones(1, 1);
    ps[0].has_grad = true;
    adam.step({&ps});
  }
  CHECK(ps[0].value(0, 0) == doctest::Approx(-0.2).epsilon(1e-6));
}

TEST_CASE("adam with zero gradients is a no-op for all t") {
  ParamSet ps;
  ps.add("w", Matrix::Constant(2, 2, 0.3));
  Adam adam({0.1, 0.5, 0.999, 1e-8});
  for (int i = 0; i < 5; ++i) {
    ps[0].grad = Matrix::Zero(2, 2);
    ps[0].has_grad = true;
    adam.step({&ps});
    CHECK(ps[0].value.isApprox(Matrix::Constant(2, 2, 0.3)));
  }
}

TEST_CASE("adam refuses parameters without gradients") {
  ParamSet ps;
  ps.add("w", Matrix::Zero(1, 1));
  Adam adam;
  CHECK_THROWS_AS(adam.step({&ps}), ConfigError);
}

TEST_CASE("gradient check on linear net with quadratic loss") {
  Rng rng(11);
  Network net("lin", {LayerSpec::dense(4, 3), LayerSpec::dense(3, 2)}, rng);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix target = random_matrix(5, 2, rng);
  CHECK(gradient_check(net, x, quadratic_loss(target)) < 1e-7);
}

TEST_CASE("gradient check detects a corrupted gradient") {
  Rng rng(12);
  Network net("lin", {LayerSpec::dense(4, 3), LayerSpec::act(3, Activation::leaky_relu), LayerSpec::dense(3, 2)}, rng);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix target = random_matrix(5, 2, rng);
  const double err = gradient_check(net, x, quadratic_loss(target), 1e-5, [](ParamSet& ps) {
    for (auto& p : ps) p.grad *= 1.1;
  });
  CHECK(err > 0.05);
}

TEST_CASE("gradient check on 2-layer net with about 50 parameters") {
  Rng rng(13);
  // 4*6 + 6 + 6*3 + 3 = 51 parameters.
  Network net("two", {LayerSpec::dense(4, 6), LayerSpec::act(6, Activation::leaky_relu), LayerSpec::dense(6, 3)}, rng);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix target = random_matrix(6, 3, rng);
  CHECK(gradient_check(net, x, quadratic_loss(target)) < 1e-4);
}

TEST_CASE("gradient check property over 20 random batch-norm nets") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(100 + seed);
    std::uniform_int_distribution<int> width(2, 6);
    const std::size_t in = width(rng), h = width(rng), out = width(rng);
    std::vector<LayerSpec> layers{LayerSpec::dense(in, h, false), LayerSpec::batch_norm(h),
                                  LayerSpec::act(h, Activation::leaky_relu)};
    if (seed % 2 == 0) {
      const std::size_t h2 = width(rng);
      layers.push_back(LayerSpec::dense(h, h2));
      layers.push_back(LayerSpec::act(h2, Activation::leaky_relu));
      layers.push_back(LayerSpec::dense(h2, out));
    } else {
      layers.push_back(LayerSpec::dense(h, out));
    }
    Network net("p", layers, rng);
    const Matrix x = random_matrix(8, static_cast<Eigen::Index>(in), rng);
    const Matrix target = random_matrix(8, static_cast<Eigen::Index>(out), rng);
    CHECK(gradient_check(net, x, quadratic_loss(target)) < 1e-4);
  }
}

TEST_CASE("gradient check through sigmoid and bce") {
  Rng rng(21);
  Network net("d", {LayerSpec::dense(3, 4), LayerSpec::act(4, Activation::relu), LayerSpec::dense(4, 1),
                    LayerSpec::act(1, Activation::sigmoid)},
              rng);
  const Matrix x = random_matrix(6, 3, rng);
  auto loss = [](const Matrix& out, Matrix& grad) {
    grad.resize(out.rows(), 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const int t = static_cast<int>(i % 2);
      total += binary_cross_entropy(out(i, 0), t);
      grad(i, 0) = t == 1 ? -1.0 / out(i, 0) : 1.0 / (1.0 - out(i, 0));
    }
    return total;
  };
  CHECK(gradient_check(net, x, loss) < 1e-4);
}

TEST_CASE("layer spec validation") {
  CHECK_THROWS_AS(LayerSpec::dense(0, 3).validate(), ConfigError);
  CHECK_THROWS_AS(LayerSpec::act(3, Activation::leaky_relu, 1.5).validate(), ConfigError);
  Rng rng(1);
  CHECK_THROWS(Network("bad", {LayerSpec::dense(3, 4), LayerSpec::dense(5, 2)}, rng));
}

TEST_CASE("param names are unique") {
  ParamSet ps;
  ps.add("a", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(ps.add("a", Matrix::Zero(1, 1)), ConfigError);
  CHECK_THROWS(ps.find("missing"));
}

TEST_CASE("tensor validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.batch() == 2);
  CHECK(t.row_width() == 3);
  CHECK(t.reshaped({3, 2}).shape() == std::vector<std::size_t>{3, 2});
  CHECK(Tensor::from_matrix(t.to_matrix()) == t);
}
