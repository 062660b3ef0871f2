#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igmmgan/bigan.hpp"
#include "igmmgan/data.hpp"
#include "igmmgan/igmm.hpp"
#include "igmmgan/scoring.hpp"

namespace igmmgan {

/// Mann-Whitney AUC: P(s_anomaly > s_normal) + P(tie) / 2. Labels are 0/1.
/// Throws ValidationError unless both classes are present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // score >= threshold is flagged; +inf for the origin
};

/// Step curve over distinct thresholds, from (0, 0) to (1, 1).
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

enum class DataSource { synthetic, trajectory_csv, plt_dir, mnist };
const char* to_string(DataSource s);
DataSource data_source_from_string(const std::string& s);

/// How the NIW prior is chosen: a named preset, an explicit triple, or a
/// grid search scored by macro-F1 against the training labels.
struct PriorChoice {
  std::string mode = "preset";  // preset | explicit | tune
  std::string preset = "trajectory";
  double kappa0 = 0.1;
  std::string dof = "d+15";
  double scale = 5.0;
  TuneGrid grid{};
  std::size_t coarse_sweeps = 100;
  std::size_t coarse_burnin = 60;
  std::size_t coarse_thin = 10;
};

struct ExperimentSpec {
  DataSource source = DataSource::synthetic;
  SyntheticSpec synthetic{};
  std::filesystem::path input;  // CSV file, PLT directory or MNIST directory
  std::vector<int> mnist_digits = {0, 1, 2};
  std::size_t mnist_per_class = 2000;
  std::size_t segment_length = 32;
  std::size_t stride = 32;
  bool filter_gps_noise = false;
  double gps_noise_threshold = 0.02;

  int holdout_class = 2;
  double split_ratio = 0.8;

  BiGANConfig bigan{};
  PriorChoice prior{};
  IGMMOptions igmm{};
  std::vector<double> egbad_weights = {0.5, 0.9};

  std::uint64_t seed = 0;
  std::filesystem::path output = "out";
  std::size_t threads = 0;  // 0 -> IGMMGAN_THREADS or hardware concurrency

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// Seeds for data generation, split, BiGAN training and the Gibbs sampler.
  std::uint64_t data_seed() const;
  std::uint64_t split_seed() const;
  std::uint64_t bigan_seed() const;
  std::uint64_t igmm_seed() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

/// Reads a JSON experiment file; ConfigError names the path on failure.
ExperimentSpec load_experiment(const std::filesystem::path& path);

/// Thread count from the spec, IGMMGAN_THREADS, or the hardware.
std::size_t resolve_threads(std::size_t requested);

/// SHA-256 over the canonical spec JSON (output path excluded) and the
/// contents of any input files.
std::string config_hash(const ExperimentSpec& spec);

/// Segments of the configured source, unnormalized.
std::vector<Segment> load_dataset(const ExperimentSpec& spec);

/// Split and model-ready matrices for one experiment. Normalization (and
/// the clamp of training inputs to [-5, 5]) is fitted on training segments only.
struct PreparedData {
  DatasetSplit split;
  std::optional<ChannelStats> stats;
  Matrix train_x;
  Matrix test_x;
  std::vector<std::size_t> data_shape;
};

PreparedData prepare_data(const ExperimentSpec& spec);

/// Maps raw segments into model input space with the stored stats.
Matrix model_inputs(const std::vector<Segment>& segments, DataSource source,
                    const std::optional<ChannelStats>& stats);

/// Inverse of model_inputs for generated rows.
std::vector<Segment> from_model_space(const Matrix& rows, const std::vector<std::size_t>& shape,
                                      DataSource source, const std::optional<ChannelStats>& stats);

/// IGMM on training latent codes with the spec's prior: a preset, an explicit
/// triple, or a grid search against `labels` (selected triple in `selection`).
IGMMResult fit_mixture(const ExperimentSpec& spec, const Matrix& train_z, const std::vector<int>& labels,
                       nlohmann::json* selection = nullptr);

/// Trained BiGAN, multimodal model and input normalization, as persisted.
struct PersistedModel {
  BiGANModel bigan;
  std::optional<IGMMResult> igmm;
  std::optional<MultimodalModel> mixture;
  std::optional<ChannelStats> stats;
  DataSource source = DataSource::synthetic;
};

inline constexpr int kModelFormatVersion = 1;

/// Writes bigan.iggn (+ manifest), model.json and, when given, igmm.json
/// into `dir`. Returns the files written.
std::vector<std::filesystem::path> persist_model(const std::filesystem::path& dir, const BiGANModel& bigan,
                                                 const std::optional<IGMMResult>& igmm,
                                                 const std::optional<ChannelStats>& stats,
                                                 DataSource source = DataSource::synthetic);
/// Writes only igmm.json next to an existing model.
std::filesystem::path persist_mixture(const std::filesystem::path& dir, const IGMMResult& igmm);
/// Throws ChecksumError on corrupted weights and VersionError on a newer format.
PersistedModel load_model(const std::filesystem::path& dir);

struct MethodReport {
  std::string name;
  double auc = 0.0;
  double auc_holdout = 0.0;  // held-out class vs normal test segments only
  double mean_score_seconds = 0.0;
  std::vector<double> scores;
};

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  bool contains_timing = false;
};

struct MetricsReport {
  std::vector<MethodReport> methods;
  std::size_t igmm_components = 0;
  std::vector<std::size_t> igmm_sizes;
  nlohmann::json seeds;
  std::string config_hash;
  nlohmann::json config;
  std::vector<int> test_labels;
  std::vector<int> test_classes;
  std::vector<AnomalyType> test_anomalies;
  /// method -> group -> median score; groups are the anomaly types plus
  /// "normal" and "holdout".
  nlohmann::json type_medians;
  std::vector<ManifestEntry> manifest;
  std::vector<std::string> loss_files;

  nlohmann::json to_json() const;
};

/// metrics.json content with timing fields and checksums of timing-bearing
/// files removed, for reproducibility comparisons.
nlohmann::json strip_timing(const nlohmann::json& metrics);

using ProgressFn = std::function<void(const std::string&)>;

/// Full pipeline: data -> split -> BiGAN -> encode train -> IGMM -> score test
/// -> AUC. Writes metrics.json, roc.csv, scores.csv, labels.csv, loss.csv and
/// model/ into spec.output. A failing stage raises Error naming the stage.
MetricsReport evaluate_comparison(const ExperimentSpec& spec, const ProgressFn& progress = {});

}  // namespace igmmgan
