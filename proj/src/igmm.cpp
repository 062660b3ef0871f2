#include "igmmgan/igmm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"

namespace igmmgan {

// ---------------------------------------------------------------------------
// Prior and sufficient statistics

void NIWPrior::validate() const {
  const auto d = static_cast<Eigen::Index>(dim());
  if (d < 1) throw ConfigError("NIW prior needs dimension >= 1");
  if (!(kappa > 0.0)) throw ConfigError("NIW kappa must be > 0");
  if (!(dof > static_cast<double>(d) - 1.0)) {
    throw ConfigError("inverse-Wishart dof " + std::to_string(dof) + " must exceed d - 1 = " +
                      std::to_string(d - 1));
  }
  if (scale.rows() != d || scale.cols() != d) throw DimensionError("NIW scale must be d x d");
  if (!scale.isApprox(scale.transpose(), 1e-10)) throw ConfigError("NIW scale must be symmetric");
  if (Eigen::LLT<DenseMatrix>(scale).info() != Eigen::Success) {
    throw ConfigError("NIW scale must be positive definite");
  }
}

NIWPrior NIWPrior::isotropic(Vector mu0, double kappa0, double dof, double s) {
  NIWPrior p;
  const auto d = mu0.size();
  p.mean = std::move(mu0);
  p.kappa = kappa0;
  p.dof = dof;
  p.scale = s * DenseMatrix::Identity(d, d);
  p.validate();
  return p;
}

ClusterStats::ClusterStats(std::size_t d)
    : sum(Vector::Zero(static_cast<Eigen::Index>(d))),
      outer(DenseMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

void ClusterStats::add(const Vector& z) {
  ++n;
  sum += z;
  outer.noalias() += z * z.transpose();
}

void ClusterStats::remove(const Vector& z) {
  if (n == 0) throw ConfigError("cannot remove a point from an empty cluster");
  --n;
  if (n == 0) {
    sum.setZero();
    outer.setZero();
    return;
  }
  sum -= z;
  outer.noalias() -= z * z.transpose();
}

ClusterStats ClusterStats::from_points(const Matrix& data, const std::vector<std::size_t>& rows) {
  ClusterStats s(static_cast<std::size_t>(data.cols()));
  for (std::size_t r : rows) s.add(data.row(static_cast<Eigen::Index>(r)).transpose());
  return s;
}

NIWPrior niw_posterior(const NIWPrior& prior, const ClusterStats& stats) {
  if (stats.n == 0) return prior;
  if (static_cast<std::size_t>(stats.sum.size()) != prior.dim()) {
    throw DimensionError("cluster statistics dimension does not match the prior");
  }
  const double n = static_cast<double>(stats.n);
  NIWPrior post;
  post.kappa = prior.kappa + n;
  post.dof = prior.dof + n;
  const Vector zbar = stats.sum / n;
  post.mean = (prior.kappa * prior.mean + stats.sum) / post.kappa;
  const DenseMatrix scatter = stats.outer - n * zbar * zbar.transpose();
  const Vector diff = zbar - prior.mean;
  post.scale = prior.scale + scatter + (prior.kappa * n / post.kappa) * diff * diff.transpose();
  post.scale = 0.5 * (post.scale + post.scale.transpose()).eval();
  return post;
}

Eigen::LLT<DenseMatrix> robust_cholesky(const DenseMatrix& m, const std::string& what) {
  Eigen::LLT<DenseMatrix> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double d = static_cast<double>(m.rows());
  const double jitter = std::max(1e-6 * std::abs(m.trace()) / d, 1e-8);
  llt.compute(m + jitter * DenseMatrix::Identity(m.rows(), m.cols()));
  if (llt.info() != Eigen::Success) {
    throw NumericError(what + " is not positive definite even after jitter " + std::to_string(jitter));
  }
  return llt;
}

StudentT::StudentT(const NIWPrior& posterior) {
  const double d = static_cast<double>(posterior.dim());
  nu_ = posterior.dof - d + 1.0;
  if (!(nu_ > 0.0)) throw ConfigError("Student-t degrees of freedom must be positive");
  loc_ = posterior.mean;
  const DenseMatrix scale = posterior.scale * ((posterior.kappa + 1.0) / (posterior.kappa * nu_));
  chol_ = robust_cholesky(scale, "predictive scale");
  const double log_det = 2.0 * chol_.matrixLLT().diagonal().array().log().sum();
  log_norm_ = std::lgamma(0.5 * (nu_ + d)) - std::lgamma(0.5 * nu_) -
              0.5 * d * std::log(nu_ * std::numbers::pi) - 0.5 * log_det;
}

double StudentT::logpdf(const Vector& z) const {
  if (z.size() != loc_.size()) throw DimensionError("Student-t point dimension mismatch");
  const Vector white = chol_.matrixL().solve(z - loc_);
  const double d = static_cast<double>(loc_.size());
  return log_norm_ - 0.5 * (nu_ + d) * std::log1p(white.squaredNorm() / nu_);
}

double predictive_logpdf(const Vector& z, const NIWPrior& posterior) {
  return StudentT(posterior).logpdf(z);
}

// ---------------------------------------------------------------------------
// Collapsed Gibbs sampling

namespace {

double log_sum_exp(const std::vector<double>& v) {
  const double hi = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

/// Samples an index from unnormalized log weights.
std::size_t sample_log_weights(const std::vector<double>& logw, Rng& rng, bool check) {
  const double lse = log_sum_exp(logw);
  std::vector<double> probs(logw.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    probs[k] = std::exp(logw[k] - lse);
    total += probs[k];
  }
  if (check && std::abs(total - 1.0) > 1e-12) {
    throw NumericError("Gibbs conditional sums to " + std::to_string(total) + ", not 1");
  }
  std::uniform_real_distribution<double> unif(0.0, total);
  double u = unif(rng);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (u < probs[k]) return k;
    u -= probs[k];
  }
  return probs.size() - 1;
}

GibbsCluster make_cluster(const NIWPrior& prior, ClusterStats stats) {
  GibbsCluster c{std::move(stats), {}};
  c.predictive = StudentT(niw_posterior(prior, c.stats));
  return c;
}

void check_data(const Matrix& data, const NIWPrior& prior) {
  if (data.rows() == 0) throw ConfigError("IGMM needs at least one point");
  if (static_cast<std::size_t>(data.cols()) != prior.dim()) {
    throw DimensionError("data width " + std::to_string(data.cols()) +
                         " does not match prior dimension " + std::to_string(prior.dim()));
  }
  if (!data.allFinite()) throw NumericError("IGMM data contains non-finite values");
}

}  // namespace

GibbsState GibbsState::initialize(const Matrix& data, const NIWPrior& prior, double alpha,
                                  std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ConfigError("DP concentration alpha must be > 0");
  check_data(data, prior);
  GibbsState state;
  state.alpha = alpha;
  state.rng.seed(seed);
  state.assignments.assign(static_cast<std::size_t>(data.rows()), -1);
  const StudentT prior_pred(prior);
  const std::size_t d = prior.dim();
  std::vector<double> logw;
  std::vector<int> ids;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Vector z = data.row(i).transpose();
    logw.clear();
    ids.clear();
    for (const auto& [id, c] : state.clusters) {
      logw.push_back(std::log(static_cast<double>(c.stats.n)) + c.predictive.logpdf(z));
      ids.push_back(id);
    }
    logw.push_back(std::log(alpha) + prior_pred.logpdf(z));
    const std::size_t pick = sample_log_weights(logw, state.rng, true);
    int target;
    if (pick == ids.size()) {
      target = state.next_id++;
      state.clusters.emplace(target, GibbsCluster{ClusterStats(d), prior_pred});
    } else {
      target = ids[pick];
    }
    GibbsCluster& c = state.clusters.at(target);
    c.stats.add(z);
    c.predictive = StudentT(niw_posterior(prior, c.stats));
    state.assignments[static_cast<std::size_t>(i)] = target;
  }
  return state;
}

void gibbs_sweep(GibbsState& state, const Matrix& data, const NIWPrior& prior, const SweepOptions& opts) {
  check_data(data, prior);
  if (state.assignments.size() != static_cast<std::size_t>(data.rows())) {
    throw DimensionError("Gibbs state does not match the number of data points");
  }
  const StudentT prior_pred(prior);
  const double log_alpha = std::log(state.alpha);
  std::vector<double> logw;
  std::vector<int> ids;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Vector z = data.row(i).transpose();
    const int origin = state.assignments[static_cast<std::size_t>(i)];
    auto it = state.clusters.find(origin);
    GibbsCluster saved = it->second;
    bool origin_alive = true;
    it->second.stats.remove(z);
    if (it->second.stats.n == 0) {
      state.clusters.erase(it);
      origin_alive = false;
    } else {
      it->second.predictive = StudentT(niw_posterior(prior, it->second.stats));
    }

    // CRP weights n_k / (N - 1 + alpha) and alpha / (N - 1 + alpha); the
    // shared denominator cancels in the normalization.
    logw.clear();
    ids.clear();
    for (const auto& [id, c] : state.clusters) {
      logw.push_back(std::log(static_cast<double>(c.stats.n)) + c.predictive.logpdf(z));
      ids.push_back(id);
    }
    logw.push_back(log_alpha + prior_pred.logpdf(z));
    const std::size_t pick = sample_log_weights(logw, state.rng, opts.check_normalization);

    int target;
    if (pick == ids.size()) {
      if (!origin_alive) {
        // A singleton that reseats alone keeps its id and exact statistics.
        state.clusters.emplace(origin, std::move(saved));
        continue;
      }
      target = state.next_id++;
      state.clusters.emplace(target, make_cluster(prior, [&] {
                               ClusterStats s(prior.dim());
                               s.add(z);
                               return s;
                             }()));
    } else {
      target = ids[pick];
      if (target == origin) {
        state.clusters.at(origin) = std::move(saved);
        continue;
      }
      GibbsCluster& c = state.clusters.at(target);
      c.stats.add(z);
      c.predictive = StudentT(niw_posterior(prior, c.stats));
    }
    state.assignments[static_cast<std::size_t>(i)] = target;
  }
}

void IGMMOptions::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("DP concentration alpha must be > 0");
  if (thin < 1) throw ConfigError("thinning interval must be >= 1");
  if (sweeps <= burnin) throw ConfigError("sweeps must exceed burn-in");
  if ((sweeps - burnin) / thin < 1) {
    throw ConfigError("schedule collects no samples: (sweeps - burnin) / thin < 1");
  }
}

IGMMResult run_igmm(const Matrix& data, const NIWPrior& prior, const IGMMOptions& options) {
  options.validate();
  prior.validate();
  GibbsState state = GibbsState::initialize(data, prior, options.alpha, options.seed);
  IGMMResult result;
  result.cluster_counts.reserve(options.sweeps);
  for (std::size_t sweep = 1; sweep <= options.sweeps; ++sweep) {
    gibbs_sweep(state, data, prior);
    result.cluster_counts.push_back(state.cluster_count());
    if (sweep > options.burnin && (sweep - options.burnin) % options.thin == 0) {
      result.samples.push_back(state.assignments);
    }
  }
  result.consensus = align_samples(result.samples);

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < result.consensus.size(); ++i) members[result.consensus[i]].push_back(i);

  const auto d = data.cols();
  for (const auto& [label, rows] : members) {
    if (rows.size() <= options.min_cluster_size) continue;
    MixtureComponent comp;
    comp.label = label;
    comp.size = rows.size();
    if (options.extraction == ComponentExtraction::empirical) {
      Vector mean = Vector::Zero(d);
      for (std::size_t r : rows) mean += data.row(static_cast<Eigen::Index>(r)).transpose();
      mean /= static_cast<double>(rows.size());
      DenseMatrix cov = DenseMatrix::Zero(d, d);
      for (std::size_t r : rows) {
        const Vector c = data.row(static_cast<Eigen::Index>(r)).transpose() - mean;
        cov.noalias() += c * c.transpose();
      }
      cov /= static_cast<double>(rows.size() - 1);
      const double jitter = std::max(1e-6 * cov.trace() / static_cast<double>(d), 1e-12);
      cov += jitter * DenseMatrix::Identity(d, d);
      comp.mean = std::move(mean);
      comp.covariance = std::move(cov);
    } else {
      const NIWPrior post = niw_posterior(prior, ClusterStats::from_points(data, rows));
      const double denom = post.dof - static_cast<double>(d) - 1.0;
      comp.mean = post.mean;
      comp.covariance = post.scale / (denom > 0.0 ? denom : post.dof);
    }
    robust_cholesky(comp.covariance, "component covariance");
    result.components.push_back(std::move(comp));
  }
  if (result.components.empty()) {
    throw ConfigError("no components: every consensus cluster has <= " +
                      std::to_string(options.min_cluster_size) +
                      " points; lower min_cluster_size");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(nlohmann::json& j, const IGMMResult& r) {
  auto comps = nlohmann::json::array();
  for (const auto& c : r.components) {
    std::vector<double> mean(c.mean.data(), c.mean.data() + c.mean.size());
    std::vector<double> cov;
    cov.reserve(static_cast<std::size_t>(c.covariance.size()));
    for (Eigen::Index a = 0; a < c.covariance.rows(); ++a) {
      for (Eigen::Index b = 0; b < c.covariance.cols(); ++b) cov.push_back(c.covariance(a, b));
    }
    comps.push_back({{"label", c.label}, {"mean", mean}, {"covariance", cov}, {"size", c.size}});
  }
  j = nlohmann::json{{"components", comps},
                     {"consensus", r.consensus},
                     {"diagnostics",
                      {{"cluster_counts", r.cluster_counts}, {"collected_samples", r.samples.size()}}}};
}

void from_json(const nlohmann::json& j, IGMMResult& r) {
  r = IGMMResult{};
  for (const auto& jc : j.at("components")) {
    MixtureComponent c;
    c.label = jc.value("label", 0);
    const auto mean = jc.at("mean").get<std::vector<double>>();
    const auto cov = jc.at("covariance").get<std::vector<double>>();
    const auto d = static_cast<Eigen::Index>(mean.size());
    if (static_cast<Eigen::Index>(cov.size()) != d * d) {
      throw FormatError("component covariance must hold d*d row-major values");
    }
    c.mean = Eigen::Map<const Vector>(mean.data(), d);
    c.covariance.resize(d, d);
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) c.covariance(a, b) = cov[static_cast<std::size_t>(a * d + b)];
    }
    c.size = jc.value("size", std::size_t{0});
    r.components.push_back(std::move(c));
  }
  if (j.contains("consensus")) r.consensus = j.at("consensus").get<std::vector<int>>();
  if (j.contains("diagnostics") && j.at("diagnostics").contains("cluster_counts")) {
    r.cluster_counts = j.at("diagnostics").at("cluster_counts").get<std::vector<std::size_t>>();
  }
}

// ---------------------------------------------------------------------------
// Hungarian assignment

Assignment hungarian(const DenseMatrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw ConfigError("hungarian: empty cost matrix");
  if (!cost.allFinite()) throw NumericError("hungarian: non-finite cost");
  const bool transposed = cost.rows() > cost.cols();
  const DenseMatrix a = transposed ? DenseMatrix(cost.transpose()) : cost;
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(a.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // 1-indexed potentials; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment result;
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j] == 0) continue;
    std::size_t row = match[j] - 1, col = j - 1;
    if (transposed) std::swap(row, col);
    result.pairs.emplace_back(row, col);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  for (const auto& [r, c] : result.pairs) result.cost += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return result;
}

// ---------------------------------------------------------------------------
// Label alignment and scoring

namespace {

/// Relabels to 0..K-1 in order of first appearance.
std::vector<int> compact_labels(const std::vector<int>& labels, int& count) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = ids.try_emplace(labels[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  count = static_cast<int>(ids.size());
  return out;
}

DenseMatrix contingency(const std::vector<int>& rows, int n_rows, const std::vector<int>& cols, int n_cols) {
  DenseMatrix c = DenseMatrix::Zero(n_rows, n_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) c(rows[i], cols[i]) += 1.0;
  return c;
}

}  // namespace

std::vector<int> align_samples(const std::vector<std::vector<int>>& samples) {
  if (samples.empty()) throw ConfigError("align_samples needs at least one labeling");
  const std::size_t n = samples.front().size();
  for (const auto& s : samples) {
    if (s.size() != n) throw DimensionError("label samples differ in length");
  }
  if (samples.size() == 1) return samples.front();

  int ref_count = 0;
  const std::vector<int> ref = compact_labels(samples.front(), ref_count);
  int next_fresh = ref_count;
  std::vector<std::vector<int>> aligned{ref};
  for (std::size_t s = 1; s < samples.size(); ++s) {
    int count = 0;
    const std::vector<int> lab = compact_labels(samples[s], count);
    const DenseMatrix overlap = contingency(lab, count, ref, ref_count);
    const Assignment match = hungarian(-overlap);
    std::vector<int> mapping(static_cast<std::size_t>(count), -1);
    for (const auto& [r, c] : match.pairs) mapping[r] = static_cast<int>(c);
    for (int& m : mapping) {
      if (m < 0) m = next_fresh++;
    }
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = mapping[static_cast<std::size_t>(lab[i])];
    aligned.push_back(std::move(out));
  }

  std::vector<int> consensus(n);
  std::map<int, int> votes;
  for (std::size_t i = 0; i < n; ++i) {
    votes.clear();
    int best = 0;
    for (const auto& a : aligned) best = std::max(best, ++votes[a[i]]);
    for (auto it = aligned.rbegin(); it != aligned.rend(); ++it) {
      if (votes[(*it)[i]] == best) {
        consensus[i] = (*it)[i];
        break;
      }
    }
  }
  return consensus;
}

double macro_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.empty() || truth.empty()) throw ConfigError("macro_f1 needs nonempty input");
  if (predicted.size() != truth.size()) throw DimensionError("macro_f1 inputs differ in length");
  int n_pred = 0, n_true = 0;
  const auto pred = compact_labels(predicted, n_pred);
  const auto tru = compact_labels(truth, n_true);
  const DenseMatrix c = contingency(tru, n_true, pred, n_pred);
  const Vector class_sizes = c.rowwise().sum();
  const Eigen::RowVectorXd cluster_sizes = c.colwise().sum();
  const Assignment match = hungarian(-c);
  double total = 0.0;
  for (const auto& [cls, k] : match.pairs) {
    const double tp = c(static_cast<Eigen::Index>(cls), static_cast<Eigen::Index>(k));
    if (tp <= 0.0) continue;
    const double precision = tp / cluster_sizes(static_cast<Eigen::Index>(k));
    const double recall = tp / class_sizes(static_cast<Eigen::Index>(cls));
    total += 2.0 * precision * recall / (precision + recall);
  }
  return total / static_cast<double>(n_true);
}

// ---------------------------------------------------------------------------
// Tuning

DofRule DofRule::parse(const std::string& text) {
  DofRule r{text};
  r.resolve(1);  // validates
  return r;
}

double DofRule::resolve(std::size_t d) const {
  const double dd = static_cast<double>(d);
  try {
    if (text.size() > 2 && text.rfind("d+", 0) == 0) return dd + std::stod(text.substr(2));
    if (text.size() > 1 && text.back() == 'd') return std::stod(text.substr(0, text.size() - 1)) * dd;
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("cannot parse inverse-Wishart dof rule '" + text + "' (use d+K, Kd, or a number)");
}

PriorTriple image_prior_preset() { return {0.1, DofRule::parse("d+20"), 7.0}; }
PriorTriple trajectory_prior_preset() { return {0.1, DofRule::parse("d+15"), 5.0}; }

NIWPrior prior_from_triple(const Matrix& data, const PriorTriple& t) {
  if (data.rows() == 0) throw ConfigError("cannot center a prior on empty data");
  const Vector mu0 = data.colwise().mean().transpose();
  return NIWPrior::isotropic(mu0, t.kappa0, t.dof.resolve(static_cast<std::size_t>(data.cols())), t.scale);
}

TuneResult tune_grid(const Matrix& data, const std::vector<int>& labels, const TuneGrid& grid,
                     const IGMMOptions& coarse, const IGMMOptions& full, std::size_t threads) {
  if (labels.size() != static_cast<std::size_t>(data.rows())) {
    throw DimensionError("tuning labels do not match the number of points");
  }
  const std::size_t d = static_cast<std::size_t>(data.cols());
  std::vector<double> kappas = grid.kappa0, scales = grid.scale;
  std::vector<DofRule> dofs = grid.dof;
  std::sort(kappas.begin(), kappas.end());
  std::sort(scales.begin(), scales.end());
  std::stable_sort(dofs.begin(), dofs.end(),
                   [d](const DofRule& a, const DofRule& b) { return a.resolve(d) < b.resolve(d); });

  TuneResult result;
  for (double k : kappas) {
    for (const auto& m : dofs) {
      for (double s : scales) result.cells.push_back({k, m, s, m.resolve(d), std::nullopt, {}});
    }
  }
  if (result.cells.empty()) throw ConfigError("tuning grid is empty");

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      TuneCell& cell = result.cells[i];
      try {
        const NIWPrior prior = prior_from_triple(data, {cell.kappa0, cell.dof, cell.scale});
        const IGMMResult r = run_igmm(data, prior, coarse);
        cell.f1 = macro_f1(r.consensus, labels);
      } catch (const Error& e) {
        cell.error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, result.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  const TuneCell* best = nullptr;
  for (const auto& cell : result.cells) {
    if (cell.f1 && (!best || *cell.f1 > *best->f1)) best = &cell;
  }
  if (!best) throw ConfigError("every tuning cell failed; first error: " + result.cells.front().error);
  result.best = *best;
  result.refit = run_igmm(data, prior_from_triple(data, {best->kappa0, best->dof, best->scale}), full);
  return result;
}

}  // namespace igmmgan
