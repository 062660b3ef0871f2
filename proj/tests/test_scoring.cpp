#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "igmmgan/error.hpp"
#include "igmmgan/scoring.hpp"

using namespace igmmgan;

namespace {

DenseMatrix random_spd(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> n;
  const DenseMatrix a = DenseMatrix::NullaryExpr(d, d, [&] { return n(rng); });
  return a * a.transpose() + 0.5 * DenseMatrix::Identity(d, d);
}

Vector random_vector(Eigen::Index d, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return Vector::NullaryExpr(d, [&] { return n(rng); });
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

BiGANModel tiny_model() {
  BiGANConfig c;
  c.latent_dim = 3;
  c.data_shape = {2, 4};
  c.batch_size = 16;
  c.seed = 2;
  BiGANModel m = BiGANModel::create(c);
  m.steps_trained = 1;
  return m;
}

}  // namespace

TEST_CASE("mahalanobis worked examples") {
  const GaussianComponent unit(vec({1, 1}), DenseMatrix::Identity(2, 2));
  CHECK(mahalanobis(vec({1, 1}), unit) == 0.0);
  CHECK(mahalanobis(vec({4, 5}), unit) == doctest::Approx(5.0));
  DenseMatrix diag = DenseMatrix::Zero(2, 2);
  diag.diagonal() << 4, 1;
  const GaussianComponent c(vec({0, 0}), diag);
  CHECK(mahalanobis(vec({2, 0}), c) == doctest::Approx(1.0));
  CHECK_THROWS_AS(mahalanobis(vec({1, 2, 3}), unit), DimensionError);
}

TEST_CASE("cached Cholesky reconstructs the covariance") {
  Rng rng(1);
  for (Eigen::Index d = 1; d <= 10; ++d) {
    const DenseMatrix s = random_spd(d, rng);
    const GaussianComponent c(Vector::Zero(d), s);
    CHECK((c.cholesky() * c.cholesky().transpose() - s).cwiseAbs().maxCoeff() < 1e-10);
  }
  DenseMatrix bad = DenseMatrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  CHECK_THROWS_AS(GaussianComponent(Vector::Zero(2), bad), NumericError);
}

TEST_CASE("min over components") {
  MultimodalModel m;
  m.components.emplace_back(vec({0, 0}), DenseMatrix::Identity(2, 2));
  m.components.emplace_back(vec({10, 10}), DenseMatrix::Identity(2, 2));
  CHECK(min_mahalanobis_score(vec({1, 0}), m).distance == doctest::Approx(1.0));
  CHECK(min_mahalanobis_score(vec({1, 0}), m).index == 0);
  CHECK(min_mahalanobis_score(vec({10, 10}), m).distance == 0.0);
  CHECK(min_mahalanobis_score(vec({10, 10}), m).index == 1);
  CHECK(min_mahalanobis_score(vec({5, 5}), m).index == 0);  // tie

  MultimodalModel one;
  one.components.push_back(m.components[1]);
  CHECK(min_mahalanobis_score(vec({3, -2}), one).distance == mahalanobis(vec({3, -2}), m.components[1]));
  CHECK_THROWS_AS(min_mahalanobis_score(vec({0, 0}), MultimodalModel{}), ConfigError);
}

TEST_CASE("minimum is below every component and adding components never raises it") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    MultimodalModel m;
    for (int k = 0; k < 4; ++k) m.components.emplace_back(random_vector(3, rng, 5.0), random_spd(3, rng));
    const Vector z = random_vector(3, rng, 5.0);
    const double best = min_mahalanobis_score(z, m).distance;
    for (const auto& c : m.components) CHECK(best <= mahalanobis(z, c));
    MultimodalModel more = m;
    more.components.emplace_back(random_vector(3, rng, 5.0), random_spd(3, rng));
    CHECK(min_mahalanobis_score(z, more).distance <= best);
  }
}

TEST_CASE("affine invariance") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + trial % 6;
    const DenseMatrix sigma = random_spd(d, rng);
    const Vector mu = random_vector(d, rng), z = random_vector(d, rng, 3.0), b = random_vector(d, rng);
    DenseMatrix a = random_spd(d, rng) + DenseMatrix::NullaryExpr(d, d, [&] {
                      return std::normal_distribution<double>(0.0, 0.3)(rng);
                    });
    if (std::abs(a.determinant()) < 1e-3) continue;
    const double base = mahalanobis(z, GaussianComponent(mu, sigma));
    const GaussianComponent moved(a * mu + b, a * sigma * a.transpose());
    CHECK(mahalanobis(a * z + b, moved) == doctest::Approx(base).epsilon(1e-8));
  }
}

TEST_CASE("triangular solve matches explicit inverse") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + trial % 10;
    const DenseMatrix sigma = random_spd(d, rng);
    const Vector mu = random_vector(d, rng), z = random_vector(d, rng, 2.0);
    const double expected = std::sqrt((z - mu).dot(sigma.inverse() * (z - mu)));
    CHECK(std::abs(mahalanobis(z, GaussianComponent(mu, sigma)) - expected) < 1e-8 * std::max(1.0, expected));
  }
}

TEST_CASE("mixture from an IGMM result") {
  IGMMResult r;
  CHECK_THROWS_AS(MultimodalModel::from_igmm(r), ConfigError);
  r.components.push_back({0, vec({1, 2}), DenseMatrix::Identity(2, 2), 60});
  const auto m = MultimodalModel::from_igmm(r);
  REQUIRE(m.components.size() == 1);
  CHECK(m.components[0].mean() == vec({1, 2}));
}

TEST_CASE("egbad endpoints and interpolation") {
  const BiGANModel model = tiny_model();
  Rng rng(5);
  Matrix x(1, 8);
  for (Eigen::Index i = 0; i < 8; ++i) x(0, i) = std::normal_distribution<double>()(rng);
  const double recon = (x - generate(model, encode(model, x))).norm();
  // Untrained discriminator with a zero final layer outputs exactly 1/2.
  CHECK(egbad_score(x, model, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(egbad_score(x, model, 1.0) == doctest::Approx(recon).epsilon(1e-12));
  CHECK(egbad_score(x, model, 0.3) == doctest::Approx(0.3 * recon + 0.7 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS(egbad_score(x, model, 1.5));
  CHECK_THROWS_AS(egbad_score(Matrix::Zero(1, 7), model, 0.5), DimensionError);
}

TEST_CASE("egbad score grows with reconstruction error at fixed discriminator loss") {
  const BiGANModel model = tiny_model();
  Rng rng(6);
  std::vector<std::pair<double, double>> pairs;  // (L_G, score)
  for (int i = 0; i < 30; ++i) {
    Matrix x(1, 8);
    for (Eigen::Index j = 0; j < 8; ++j) x(0, j) = std::normal_distribution<double>(0.0, 1.0 + i)(rng);
    // D outputs 1/2 for every pair, so L_D is fixed.
    pairs.emplace_back((x - generate(model, encode(model, x))).norm(), egbad_score(x, model, 0.9));
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i) CHECK(pairs[i].second >= pairs[i - 1].second);
}

TEST_CASE("egbad refuses an untrained model") {
  BiGANModel model = tiny_model();
  model.steps_trained = 0;
  CHECK_THROWS(egbad_score(Matrix::Zero(1, 8), model, 0.5));
}

TEST_CASE("score_dataset keeps order, handles empty input and is chunk invariant") {
  const BiGANModel model = tiny_model();
  MultimodalModel mixture;
  mixture.components.emplace_back(Vector::Zero(3), DenseMatrix::Identity(3, 3));
  Rng rng(7);
  Matrix xs(20, 8);
  for (Eigen::Index i = 0; i < xs.size(); ++i) xs.data()[i] = std::normal_distribution<double>()(rng);

  for (ScoreMethod method : {ScoreMethod::igmm_mahalanobis, ScoreMethod::egbad}) {
    ScoreRequest req;
    req.method = method;
    req.bigan = &model;
    req.mixture = &mixture;
    CHECK(score_dataset(Matrix(0, 8), req).empty());

    const auto whole = score_dataset(xs, req);
    REQUIRE(whole.size() == 20);
    ScoreRequest second = req;
    second.first_id = 12;
    second.threads = 3;
    auto chunked = score_dataset(xs.topRows(12), req);
    const auto tail = score_dataset(xs.bottomRows(8), second);
    chunked.insert(chunked.end(), tail.begin(), tail.end());
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(whole[i].id == i);
      CHECK(chunked[i].id == i);
      CHECK(whole[i].score == chunked[i].score);
      CHECK(whole[i].method == method);
      CHECK(whole[i].seconds >= 0.0);
      if (method == ScoreMethod::igmm_mahalanobis) {
        CHECK(whole[i].score == doctest::Approx(encode(model, Matrix(xs.row(static_cast<Eigen::Index>(i)))).norm()));
      }
    }
  }

  ScoreRequest missing;
  missing.bigan = &model;
  CHECK_THROWS_AS(score_dataset(xs, missing), ConfigError);
}
