#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "igmmgan/nn.hpp"
#include "igmmgan/tensor.hpp"

namespace igmmgan {

struct GpsPoint {
  double timestamp = 0.0;  // seconds
  double lat = 0.0;        // degrees
  double lon = 0.0;        // degrees
};

/// Throws ValidationError on |lat| > 90 or |lon| > 180.
void validate_point(const GpsPoint& p);

/// GeoLife PLT: 6 header lines, then `lat,lon,0,alt,days,date,time` rows.
/// The fractional-days field becomes the timestamp (days * 86400 seconds).
std::vector<GpsPoint> parse_geolife_plt(std::istream& in);
/// Emits a PLT body with 6 decimal places for lat/lon.
void write_geolife_plt(std::ostream& out, const std::vector<GpsPoint>& points);

struct Trajectory {
  std::string id;
  std::optional<int> label;
  std::vector<GpsPoint> points;
};

/// `traj_id,timestamp,lat,lon[,label]` with a header row. Trajectories keep
/// their order of first appearance.
std::vector<Trajectory> parse_trajectory_csv(std::istream& in);

struct Velocity {
  double vlat = 0.0;  // degrees / second
  double vlon = 0.0;
};

/// Forward differences; the last point repeats the previous velocity.
std::vector<Velocity> compute_velocities(const std::vector<GpsPoint>& points);

enum class AnomalyType { none, detour, speed_shift, gps_noise };
const char* to_string(AnomalyType t);
AnomalyType anomaly_type_from_string(const std::string& s);

/// One training/scoring sample: a (channels x length) tensor plus labels.
/// Trip segments have channels (lat, lon, lat-velocity, lon-velocity).
struct Segment {
  Tensor values;
  std::string source;
  int label = -1;  // mode / driver / digit
  AnomalyType anomaly = AnomalyType::none;
  bool test_only = false;  // set by make_holdout_split on every test segment

  std::size_t channels() const { return values.shape().at(0); }
  std::size_t length() const { return values.shape().at(1); }
};

/// Windows [i, i + N) for i = 0, stride, ...; the trailing partial window is dropped.
std::vector<Segment> segment_trip(const std::vector<GpsPoint>& points,
                                  const std::vector<Velocity>& velocities, std::size_t length,
                                  std::size_t stride, const std::string& source = {}, int label = -1);

/// Largest single-step displacement (degrees) along the position channels.
double max_step_displacement(const Segment& s);
/// Drops segments whose max single-step displacement exceeds `threshold`.
std::vector<Segment> filter_gps_noise(std::vector<Segment> segments, double threshold);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> degenerate;  // zero-variance channels map to 0
  double epsilon = 1e-12;
};

void to_json(nlohmann::json& j, const ChannelStats& s);
void from_json(const nlohmann::json& j, ChannelStats& s);

struct Normalized {
  std::vector<Segment> segments;
  ChannelStats stats;
};

/// Per-channel zero-mean unit-variance map fitted on `segments`.
Normalized normalize_segments(const std::vector<Segment>& segments);
std::vector<Segment> apply_normalization(const std::vector<Segment>& segments, const ChannelStats& stats);
std::vector<Segment> denormalize(const std::vector<Segment>& segments, const ChannelStats& stats);

/// Rows are flattened segments.
Matrix stack_segments(const std::vector<Segment>& segments);

struct ModeTemplate {
  std::vector<std::pair<double, double>> waypoints;  // (lat, lon)
  double speed = 1e-4;                               // degrees / second along the route
  double speed_variation = 0.15;                     // +- fraction per segment
};

struct SyntheticSpec {
  std::size_t modes = 3;
  std::vector<ModeTemplate> templates;  // empty -> built-in layout
  std::size_t segment_length = 32;
  std::size_t segments = 3000;
  double dt = 5.0;                // seconds between fixes
  double jitter = 5e-5;           // degrees, per-point Gaussian position noise
  std::set<AnomalyType> anomaly_types = {AnomalyType::detour, AnomalyType::speed_shift,
                                         AnomalyType::gps_noise};
  double anomaly_fraction = 0.0;
  double detour_amplitude = 3e-3;  // degrees of perpendicular displacement
  double gps_noise_factor = 100;   // noise scale as a multiple of jitter (>= 50)
  std::uint64_t seed = 0;

  void validate() const;
  /// Templates in use: the configured ones, or the built-in layout for `modes`.
  std::vector<ModeTemplate> resolved_templates() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

/// Labeled synthetic trip segments; exactly round(fraction * segments) anomalies.
std::vector<Segment> generate_synthetic_trips(const SyntheticSpec& spec);

/// MNIST IDX files (big-endian magic 2051/2049); pixels scaled to [0,1].
std::vector<Segment> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
std::vector<Segment> parse_mnist_idx(const std::string& image_bytes, const std::string& label_bytes);
/// Encodes images (28x28 values in [0,1]) and labels in IDX format, for tests and fixtures.
std::pair<std::string, std::string> encode_mnist_idx(const std::vector<Segment>& images);

struct DatasetSplit {
  std::vector<Segment> train;
  std::vector<Segment> test;
  std::vector<int> test_labels;  // 1 = anomalous
  double ratio = 0.8;
  int anomaly_class = 0;
};

/// Held-out-class split: every anomaly-class segment and every injected
/// anomaly goes to test; the rest splits ratio/(1-ratio) by seeded shuffle.
/// Test segments carry test_only = true.
DatasetSplit make_holdout_split(const std::vector<Segment>& segments, int anomaly_class, double ratio,
                                std::uint64_t seed);

/// Stacks segments for model fitting; throws ConfigError if any is test-only.
Matrix training_matrix(const std::vector<Segment>& segments);

/// Segment archive: IGGN tensor file (one tensor per segment) plus JSON
/// sidecar with labels and optional channel stats.
void write_segment_archive(const std::filesystem::path& path, const std::vector<Segment>& segments,
                           const std::optional<ChannelStats>& stats = std::nullopt);
std::vector<Segment> read_segment_archive(const std::filesystem::path& path,
                                          std::optional<ChannelStats>* stats = nullptr);

}  // namespace igmmgan
