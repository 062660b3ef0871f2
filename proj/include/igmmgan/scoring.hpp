#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "igmmgan/bigan.hpp"
#include "igmmgan/igmm.hpp"

namespace igmmgan {

/// Gaussian with a cached lower Cholesky factor of its covariance.
class GaussianComponent {
 public:
  /// Throws NumericError if the covariance is not SPD (after one jitter retry).
  GaussianComponent(Vector mean, DenseMatrix covariance);

  const Vector& mean() const { return mean_; }
  const DenseMatrix& covariance() const { return covariance_; }
  const DenseMatrix& cholesky() const { return lower_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }

 private:
  Vector mean_;
  DenseMatrix covariance_;
  DenseMatrix lower_;
};

struct MultimodalModel {
  std::vector<GaussianComponent> components;

  /// Throws ConfigError when the IGMM result holds no components.
  static MultimodalModel from_igmm(const IGMMResult& result);
};

/// sqrt((z - mu)^T Sigma^-1 (z - mu)) via a triangular solve.
double mahalanobis(const Vector& z, const GaussianComponent& c);

struct NearestComponent {
  double distance = 0.0;
  std::size_t index = 0;  // smallest index among ties
};

NearestComponent min_mahalanobis_score(const Vector& z, const MultimodalModel& model);

/// alpha_w * ||x - G(E(x))||_2 + (1 - alpha_w) * BCE(D(x, E(x)), 1), eval mode.
/// `x` is one flattened sample (1 x data_dim).
double egbad_score(const Matrix& x, const BiGANModel& model, double alpha_w);

enum class ScoreMethod { igmm_mahalanobis, egbad };
const char* to_string(ScoreMethod m);

struct ScoreRecord {
  std::size_t id = 0;
  double score = 0.0;
  ScoreMethod method = ScoreMethod::igmm_mahalanobis;
  double seconds = 0.0;
  std::size_t component = 0;  // nearest component (Mahalanobis only)
};

struct ScoreRequest {
  ScoreMethod method = ScoreMethod::igmm_mahalanobis;
  const BiGANModel* bigan = nullptr;
  const MultimodalModel* mixture = nullptr;  // required for Mahalanobis
  double egbad_weight = 0.9;
  std::size_t threads = 1;
  std::size_t first_id = 0;
};

/// Scores each row of `samples` (one flattened sample per row) independently,
/// timing each with a monotonic clock. Output order follows the input.
std::vector<ScoreRecord> score_dataset(const Matrix& samples, const ScoreRequest& request);

/// id,method,score,seconds
void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records,
                      bool append = false);

}  // namespace igmmgan
