// Acceptance suite: one PASS/FAIL/SKIP line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igmmgan/bigan.hpp"
#include "igmmgan/error.hpp"
#include "igmmgan/experiment.hpp"
#include "igmmgan/igmm.hpp"
#include "igmmgan/nn.hpp"

using namespace igmmgan;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

int failures = 0;

void report(int number, const std::string& title, const std::function<Outcome()>& run) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {Verdict::fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
  if (o.verdict == Verdict::fail) ++failures;
  std::cout << "criterion " << std::setw(2) << number << ": " << tag << "  " << title << "  (" << std::fixed
            << std::setprecision(1) << secs << " s)  " << o.detail << std::endl;
  std::cout.unsetf(std::ios::floatfield);
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("igmmgan_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome gradient_correctness() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    std::uniform_int_distribution<int> width(2, 8);
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
    Network net("net" + std::to_string(seed), layers, rng);
    const Matrix x = random_matrix(10, static_cast<Eigen::Index>(in), rng);
    const Matrix target = random_matrix(10, static_cast<Eigen::Index>(out), rng);
    const LossFn loss = [target](const Matrix& o, Matrix& g) {
      g = o - target;
      return 0.5 * g.squaredNorm();
    };
    worst = std::max(worst, gradient_check(net, x, loss));
  }
  return {worst < 1e-4 ? Verdict::pass : Verdict::fail, "max relative error " + sci(worst)};
}

Outcome conjugacy() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(2000 + seed);
    std::uniform_int_distribution<int> dim(1, 5), count(1, 50);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    const std::size_t d = dim(rng), n = count(rng);
    const DenseMatrix a = random_matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), rng);
    NIWPrior prior{random_matrix(1, static_cast<Eigen::Index>(d), rng).row(0).transpose(), u(rng),
                   DenseMatrix(a * a.transpose()) + DenseMatrix::Identity(d, d), static_cast<double>(d) + u(rng)};
    const Matrix data = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), rng, 3.0);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    const NIWPrior batch = niw_posterior(prior, ClusterStats::from_points(data, rows));
    std::shuffle(rows.begin(), rows.end(), rng);
    NIWPrior seq = prior;
    for (std::size_t r : rows) {
      ClusterStats one(d);
      one.add(data.row(static_cast<Eigen::Index>(r)).transpose());
      seq = niw_posterior(seq, one);
    }
    const double scale_ref = std::max(1.0, batch.scale.cwiseAbs().maxCoeff());
    worst = std::max({worst, std::abs(seq.kappa - batch.kappa), std::abs(seq.dof - batch.dof),
                      (seq.mean - batch.mean).cwiseAbs().maxCoeff(),
                      (seq.scale - batch.scale).cwiseAbs().maxCoeff() / scale_ref});
  }
  const StudentT t(NIWPrior::isotropic(Vector::Constant(1, 0.3), 0.1, 6.0, 5.0));
  double mass = 0.0;
  const double h = 0.01;
  for (double z = -2000.0; z <= 2000.0; z += h) mass += std::exp(t.logpdf(Vector::Constant(1, z))) * h;
  const bool ok = worst < 1e-9 && std::abs(mass - 1.0) < 1e-3;
  return {ok ? Verdict::pass : Verdict::fail,
          "batch/sequential max diff " + sci(worst) + ", 1-D predictive mass " + fmt(mass, 6)};
}

Outcome igmm_recovery() {
  int good = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(3000 + seed);
    std::normal_distribution<double> g;
    const double centers[3][2] = {{0, 0}, {25, 0}, {12.5, 22}};
    Matrix data(450, 2);
    std::vector<int> truth;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 150; ++i) {
        data(c * 150 + i, 0) = centers[c][0] + g(rng);
        data(c * 150 + i, 1) = centers[c][1] + g(rng);
        truth.push_back(c);
      }
    }
    IGMMOptions opts;  // 500 sweeps, 300 burn-in, thin 50, > 50 points
    opts.seed = seed;
    const IGMMResult r = run_igmm(data, prior_from_triple(data, trajectory_prior_preset()), opts);
    const double f1 = macro_f1(r.consensus, truth);
    const bool ok = r.components.size() == 3 && f1 >= 0.95;
    good += ok ? 1 : 0;
    detail << r.components.size() << "/" << fmt(f1, 3) << (seed < 9 ? " " : "");
  }
  return {good >= 9 ? Verdict::pass : Verdict::fail,
          std::to_string(good) + "/10 seeds recover 3 components with F1 >= 0.95 [components/F1: " + detail.str() +
              "]"};
}

Outcome oracles() {
  Rng rng(4000);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> dim(1, 7);
  int hungarian_ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = dim(rng);
    const DenseMatrix cost = DenseMatrix::NullaryExpr(n, n, [&] { return u(rng); });
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    hungarian_ok += std::abs(hungarian(cost).cost - best) <= 1e-9 * std::max(1.0, std::abs(best)) ? 1 : 0;
  }

  int auc_ok = 0;
  std::uniform_int_distribution<int> size(2, 200), coarse(0, 20);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      s.push_back(trial % 2 ? u(rng) : coarse(rng));
      y.push_back(i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng() % 2));
    }
    long long twice = 0, pairs = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (y[i] == 1 && y[j] == 0) {
          ++pairs;
          twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
        }
      }
    }
    auc_ok += roc_auc(s, y) == static_cast<double>(twice) / static_cast<double>(2 * pairs) ? 1 : 0;
  }
  const double worked = roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  const bool ok = hungarian_ok == 200 && auc_ok == 200 && worked == 0.75;
  return {ok ? Verdict::pass : Verdict::fail, "hungarian " + std::to_string(hungarian_ok) + "/200, roc_auc " +
                                                  std::to_string(auc_ok) + "/200, worked example " + fmt(worked, 2)};
}

struct BenchmarkRun {
  std::uint64_t seed;
  MetricsReport report;
  double wall_seconds;
};

std::vector<BenchmarkRun> benchmark_runs;

void run_benchmark() {
  if (!benchmark_runs.empty()) return;
  const auto base = load_experiment(fs::path(IGMMGAN_SOURCE_DIR) / "configs" / "synthetic_benchmark.json");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentSpec spec = base;
    spec.seed = seed;
    spec.output = scratch("benchmark_" + std::to_string(seed));
    const auto start = std::chrono::steady_clock::now();
    MetricsReport r = evaluate_comparison(spec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    benchmark_runs.push_back({seed, std::move(r), secs});
  }
}

const MethodReport& method(const MetricsReport& r, const std::string& name) {
  for (const auto& m : r.methods) {
    if (m.name == name) return m;
  }
  throw ConfigError("method " + name + " missing from report");
}

Outcome multimodal_superiority() {
  run_benchmark();
  int good = 0;
  double total = 0.0;
  std::ostringstream detail;
  for (const auto& run : benchmark_runs) {
    const double igmm = method(run.report, "igmm-mahalanobis").auc_holdout;
    double egbad = 0.0;
    for (const auto& m : run.report.methods) {
      if (m.name.rfind("egbad", 0) == 0) egbad = std::max(egbad, m.auc_holdout);
    }
    const bool ok = igmm >= 0.90 && igmm - egbad >= 0.05;
    good += ok ? 1 : 0;
    total += run.wall_seconds;
    detail << " seed " << run.seed << ": igmm " << fmt(igmm) << " egbad " << fmt(egbad) << ";";
  }
  return {good >= 4 && total < 1200.0 ? Verdict::pass : Verdict::fail,
          std::to_string(good) + "/5 seeds with held-out AUC >= 0.90 and margin >= 0.05;" + detail.str() +
              " total " + fmt(total, 0) + " s (limit 1200 s)"};
}

Outcome inference_speed() {
  run_benchmark();
  int good = 0;
  std::size_t min_test = std::numeric_limits<std::size_t>::max();
  std::ostringstream detail;
  for (const auto& run : benchmark_runs) {
    const double maha = method(run.report, "igmm-mahalanobis").mean_score_seconds;
    double fastest_egbad = std::numeric_limits<double>::infinity();
    for (const auto& m : run.report.methods) {
      if (m.name.rfind("egbad", 0) == 0) fastest_egbad = std::min(fastest_egbad, m.mean_score_seconds);
    }
    min_test = std::min(min_test, run.report.test_labels.size());
    good += maha < fastest_egbad ? 1 : 0;
    detail << " seed " << run.seed << ": " << fmt(maha * 1e6, 1) << " vs " << fmt(fastest_egbad * 1e6, 1)
           << " us (x" << fmt(fastest_egbad / maha, 2) << ");";
  }
  const bool ok = good == static_cast<int>(benchmark_runs.size()) && min_test >= 1000;
  return {ok ? Verdict::pass : Verdict::fail, "Mahalanobis faster in " + std::to_string(good) + "/" +
                                                  std::to_string(benchmark_runs.size()) + " runs on >= " +
                                                  std::to_string(min_test) + " test segments;" + detail.str()};
}

Outcome anomaly_types() {
  run_benchmark();
  int good = 0;
  std::ostringstream detail;
  for (const auto& run : benchmark_runs) {
    const auto& med = run.report.type_medians.at("igmm-mahalanobis");
    const double normal = med.at("normal"), detour = med.at("detour"), shift = med.at("speed-shift"),
                 noise = med.at("gps-noise");
    const bool ok = noise > detour && noise > shift && detour > normal && shift > normal && noise > normal;
    good += ok ? 1 : 0;
    detail << " seed " << run.seed << ": normal " << fmt(normal, 2) << " detour " << fmt(detour, 2) << " speed "
           << fmt(shift, 2) << " noise " << fmt(noise, 2) << ";";
  }
  return {good >= 4 ? Verdict::pass : Verdict::fail,
          std::to_string(good) + "/5 seeds with gps-noise highest and every type above normal (median scores);" +
              detail.str()};
}

Outcome overfit() {
  BiGANConfig c;
  c.latent_dim = 16;
  c.data_shape = {4, 32};
  c.batch_size = 64;
  c.total_steps = 2000;
  c.adam.lr = 1e-4;
  c.adversarial_weight = 0.0;
  c.recon_weight = 1.0;
  c.seed = 8;
  Rng rng(8);
  const Matrix segment = random_matrix(1, 128, rng);
  const BiGANModel model = train_bigan(c, segment.replicate(64, 1));
  const double initial = model.history.front().recon_loss;
  const double final_loss = reconstruction_loss(model, segment);
  return {final_loss < 0.01 * initial ? Verdict::pass : Verdict::fail,
          "L_R " + fmt(initial, 4) + " -> " + fmt(final_loss, 6) + " (" + fmt(100.0 * final_loss / initial, 3) +
              "% of initial)"};
}

Outcome reproducibility() {
  ExperimentSpec spec = load_experiment(fs::path(IGMMGAN_SOURCE_DIR) / "configs" / "synthetic_quick.json");
  nlohmann::json metrics[2];
  for (int i = 0; i < 2; ++i) {
    spec.output = scratch("repro_" + std::to_string(i));
    evaluate_comparison(spec);
    std::ifstream in(spec.output / "metrics.json");
    metrics[i] = nlohmann::json::parse(in);
  }
  const bool same = strip_timing(metrics[0]) == strip_timing(metrics[1]);
  return {same ? Verdict::pass : Verdict::fail,
          same ? "metrics.json identical modulo timing" : "metrics.json differs beyond timing fields"};
}

Outcome mnist_smoke() {
  const char* dir = std::getenv("IGMMGAN_MNIST_DIR");
  if (dir == nullptr || *dir == '\0') return {Verdict::skip, "set IGMMGAN_MNIST_DIR to the MNIST IDX directory"};
  ExperimentSpec spec = load_experiment(fs::path(IGMMGAN_SOURCE_DIR) / "configs" / "mnist_smoke.json");
  spec.input = dir;
  spec.output = scratch("mnist");
  const MetricsReport r = evaluate_comparison(spec);
  bool ok = true;
  std::ostringstream detail;
  for (const auto& m : r.methods) {
    ok = ok && m.auc > 0.5;
    detail << m.name << " " << fmt(m.auc) << "; ";
  }
  return {ok ? Verdict::pass : Verdict::fail, detail.str()};
}

}  // namespace

int main() {
  report(1, "gradient correctness", gradient_correctness);
  report(2, "conjugacy oracle", conjugacy);
  report(3, "IGMM recovery", igmm_recovery);
  report(4, "Hungarian and AUC oracles", oracles);
  report(5, "multimodal superiority", multimodal_superiority);
  report(6, "inference speed direction", inference_speed);
  report(7, "anomaly-type detection", anomaly_types);
  report(8, "overfit sanity", overfit);
  report(9, "reproducibility", reproducibility);
  report(10, "MNIST smoke test", mnist_smoke);
  return failures == 0 ? 0 : 1;
}
