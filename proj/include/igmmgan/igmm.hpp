#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <nlohmann/json_fwd.hpp>

#include "igmmgan/nn.hpp"
#include "igmmgan/tensor.hpp"

namespace igmmgan {

using DenseMatrix = Eigen::MatrixXd;  // column-major, for covariance algebra

/// Normal-Inverse-Wishart parameters (mean, kappa, scale, dof).
/// The same type holds both a prior and a posterior.
struct NIWPrior {
  Vector mean;
  double kappa = 1.0;
  DenseMatrix scale;
  double dof = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  /// Throws ConfigError unless kappa > 0, dof > d - 1, scale symmetric and Cholesky-factorizable.
  void validate() const;

  /// mean = mu0, scale = s * I.
  static NIWPrior isotropic(Vector mu0, double kappa0, double dof, double s);
};

/// Sufficient statistics of one cluster: count, sum, and sum of outer products.
struct ClusterStats {
  std::size_t n = 0;
  Vector sum;
  DenseMatrix outer;

  explicit ClusterStats(std::size_t d = 0);
  void add(const Vector& z);
  void remove(const Vector& z);
  static ClusterStats from_points(const Matrix& data, const std::vector<std::size_t>& rows);
};

/// Conjugate update of a NIW prior with the statistics of the assigned points.
NIWPrior niw_posterior(const NIWPrior& prior, const ClusterStats& stats);

/// Multivariate Student-t posterior predictive of a NIW posterior, with the
/// Cholesky factor of its scale cached.
class StudentT {
 public:
  StudentT() = default;
  explicit StudentT(const NIWPrior& posterior);

  double logpdf(const Vector& z) const;
  double dof() const { return nu_; }
  const Vector& location() const { return loc_; }

 private:
  Vector loc_;
  Eigen::LLT<DenseMatrix> chol_;
  double nu_ = 1.0;
  double log_norm_ = 0.0;
};

/// Log density of the posterior predictive at z: Student-t with
/// nu = m_n - d + 1, location mu_n, scale Sigma_n (kappa_n + 1) / (kappa_n nu).
double predictive_logpdf(const Vector& z, const NIWPrior& posterior);

/// Cholesky with one jittered retry (1e-6 * trace/d, floor 1e-8); throws NumericError on failure.
Eigen::LLT<DenseMatrix> robust_cholesky(const DenseMatrix& m, const std::string& what);

struct GibbsCluster {
  ClusterStats stats;
  StudentT predictive;
};

struct GibbsState {
  std::vector<int> assignments;
  std::map<int, GibbsCluster> clusters;
  double alpha = 1.0;
  Rng rng;
  int next_id = 0;

  /// Seats points one at a time by the CRP given the points before them.
  static GibbsState initialize(const Matrix& data, const NIWPrior& prior, double alpha, std::uint64_t seed);
  std::size_t cluster_count() const { return clusters.size(); }
};

struct SweepOptions {
  /// Verify each conditional distribution sums to 1 within 1e-12.
  bool check_normalization = true;
};

/// One collapsed Gibbs pass over all points in index order.
void gibbs_sweep(GibbsState& state, const Matrix& data, const NIWPrior& prior, const SweepOptions& opts = {});

enum class ComponentExtraction { empirical, posterior_mean };

struct IGMMOptions {
  double alpha = 1.0;
  std::size_t sweeps = 500;
  std::size_t burnin = 300;
  std::size_t thin = 50;
  std::size_t min_cluster_size = 50;  // clusters need strictly more points
  ComponentExtraction extraction = ComponentExtraction::empirical;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MixtureComponent {
  int label = 0;
  Vector mean;
  DenseMatrix covariance;
  std::size_t size = 0;
};

struct IGMMResult {
  std::vector<int> consensus;
  std::vector<MixtureComponent> components;
  std::vector<std::vector<int>> samples;
  std::vector<std::size_t> cluster_counts;  // per sweep
};

IGMMResult run_igmm(const Matrix& data, const NIWPrior& prior, const IGMMOptions& options);

void to_json(nlohmann::json& j, const IGMMResult& r);
void from_json(const nlohmann::json& j, IGMMResult& r);

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col)
  double cost = 0.0;
};

/// Minimum-cost one-to-one assignment of min(n, m) rows/cols (Kuhn-Munkres
/// with potentials, O(n^2 m)). Throws ConfigError on an empty matrix and
/// NumericError on non-finite costs.
Assignment hungarian(const DenseMatrix& cost);

/// Aligns every labeling to the first by Hungarian matching on overlap
/// counts, then takes a per-point majority vote (ties go to the latest sample).
std::vector<int> align_samples(const std::vector<std::vector<int>>& samples);

/// Unweighted mean of per-class F1 after Hungarian matching of predicted
/// clusters to true classes.
double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth);

/// Inverse-Wishart dof expressed relative to the latent width: "d+15", "5d", or a number.
struct DofRule {
  std::string text;
  double resolve(std::size_t d) const;
  static DofRule parse(const std::string& text);
};

struct TuneGrid {
  std::vector<double> kappa0 = {0.01, 0.1, 1, 10, 100};
  std::vector<DofRule> dof = {DofRule::parse("d+10"), DofRule::parse("d+15"), DofRule::parse("d+20"),
                              DofRule::parse("5d"),   DofRule::parse("10d"),  DofRule::parse("100d")};
  std::vector<double> scale = {1, 3, 5, 7, 9};
};

struct TuneCell {
  double kappa0 = 0.0;
  DofRule dof;
  double scale = 0.0;
  double dof_value = 0.0;
  std::optional<double> f1;  // empty when run_igmm failed
  std::string error;
};

struct TuneResult {
  TuneCell best;
  std::vector<TuneCell> cells;
  IGMMResult refit;  // winner rerun with the full schedule
};

/// Prior preset triples (kappa0, dof rule, s).
struct PriorTriple {
  double kappa0;
  DofRule dof;
  double scale;
};
PriorTriple image_prior_preset();       // (0.1, d+20, 7)
PriorTriple trajectory_prior_preset();  // (0.1, d+15, 5)

/// mu0 = column mean of data, Sigma0 = s I.
NIWPrior prior_from_triple(const Matrix& data, const PriorTriple& t);

/// Grid search maximizing macro-F1. Cells run with `coarse` options; the
/// winner (ties to smaller kappa0, then dof, then s) is refit with `full`.
TuneResult tune_grid(const Matrix& data, const std::vector<int>& labels, const TuneGrid& grid,
                     const IGMMOptions& coarse, const IGMMOptions& full, std::size_t threads = 1);

}  // namespace igmmgan
