#include "igmmgan/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "igmmgan/error.hpp"

namespace igmmgan {

GaussianComponent::GaussianComponent(Vector mean, DenseMatrix covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto d = mean_.size();
  if (d < 1) throw DimensionError("Gaussian component needs dimension >= 1");
  if (covariance_.rows() != d || covariance_.cols() != d) {
    throw DimensionError("component covariance must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  lower_ = robust_cholesky(covariance_, "component covariance").matrixL();
}

MultimodalModel MultimodalModel::from_igmm(const IGMMResult& result) {
  if (result.components.empty()) throw ConfigError("IGMM result has no components");
  MultimodalModel m;
  for (const auto& c : result.components) m.components.emplace_back(c.mean, c.covariance);
  return m;
}

double mahalanobis(const Vector& z, const GaussianComponent& c) {
  if (static_cast<std::size_t>(z.size()) != c.dim()) {
    throw DimensionError("mahalanobis: point has dimension " + std::to_string(z.size()) +
                         ", component has " + std::to_string(c.dim()));
  }
  const Vector white = c.cholesky().triangularView<Eigen::Lower>().solve(z - c.mean());
  return white.norm();
}

NearestComponent min_mahalanobis_score(const Vector& z, const MultimodalModel& model) {
  if (model.components.empty()) throw ConfigError("min_mahalanobis_score: empty model");
  NearestComponent best{mahalanobis(z, model.components.front()), 0};
  for (std::size_t i = 1; i < model.components.size(); ++i) {
    const double d = mahalanobis(z, model.components[i]);
    if (d < best.distance) best = {d, i};
  }
  return best;
}

double egbad_score(const Matrix& x, const BiGANModel& model, double alpha_w) {
  if (model.steps_trained == 0) throw ConfigError("egbad_score needs a trained model");
  if (!(alpha_w >= 0.0 && alpha_w <= 1.0)) throw ConfigError("EGBAD weight must lie in [0,1]");
  const Matrix z = encode(model, x);
  const Matrix recon = generate(model, z);
  const double l_g = (x - recon).norm();
  const auto trace = model.discriminator.forward(x, z, Mode::eval);
  double l_d = 0.0;
  for (Eigen::Index i = 0; i < trace.probs.size(); ++i) l_d += binary_cross_entropy(trace.probs.data()[i], 1);
  l_d /= static_cast<double>(trace.probs.size());
  return alpha_w * l_g + (1.0 - alpha_w) * l_d;
}

const char* to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::igmm_mahalanobis: return "igmm-mahalanobis";
    case ScoreMethod::egbad: return "egbad";
  }
  return "?";
}

std::vector<ScoreRecord> score_dataset(const Matrix& samples, const ScoreRequest& request) {
  if (request.bigan == nullptr) throw ConfigError("score_dataset needs a BiGAN model");
  if (request.method == ScoreMethod::igmm_mahalanobis && request.mixture == nullptr) {
    throw ConfigError("Mahalanobis scoring needs a multimodal model");
  }
  const auto n = static_cast<std::size_t>(samples.rows());
  std::vector<ScoreRecord> records(n);
  if (n == 0) return records;

  auto score_one = [&](std::size_t i) {
    using Clock = std::chrono::steady_clock;
    ScoreRecord& rec = records[i];
    rec.id = request.first_id + i;
    rec.method = request.method;
    const Matrix x = samples.row(static_cast<Eigen::Index>(i));
    try {
      const auto start = Clock::now();
      if (request.method == ScoreMethod::igmm_mahalanobis) {
        const Matrix z = encode(*request.bigan, x);
        const NearestComponent best = min_mahalanobis_score(z.row(0).transpose(), *request.mixture);
        rec.score = best.distance;
        rec.component = best.index;
      } else {
        rec.score = egbad_score(x, *request.bigan, request.egbad_weight);
      }
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    } catch (const Error& e) {
      throw Error("sample " + std::to_string(rec.id) + ": " + e.what());
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(request.threads, n));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < n; ++i) score_one(i);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        score_one(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return records;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records,
                      bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  if (!append) out << "id,method,score,seconds\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.id << ',' << to_string(r.method) << ',' << r.score << ',' << r.seconds << '\n';
  }
}

}  // namespace igmmgan
