#include "igmmgan/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"
#include "igmmgan/weights_io.hpp"

namespace igmmgan {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                               : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_double(std::string_view field, std::size_t line_no, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" +
                      std::string(field) + "'");
  }
  return v;
}

void validate_at(const GpsPoint& p, std::size_t line_no) {
  try {
    validate_point(p);
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
  }
}

constexpr double kSecondsPerDay = 86400.0;

}  // namespace

void validate_point(const GpsPoint& p) {
  if (!(std::abs(p.lat) <= 90.0)) throw ValidationError("latitude " + std::to_string(p.lat) + " out of range");
  if (!(std::abs(p.lon) <= 180.0)) throw ValidationError("longitude " + std::to_string(p.lon) + " out of range");
}

// ---------------------------------------------------------------------------
// GeoLife PLT

std::vector<GpsPoint> parse_geolife_plt(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  for (; line_no < 6; ++line_no) {
    if (!std::getline(in, line)) {
      throw FormatError("PLT stream ended inside the 6-line header (line " + std::to_string(line_no + 1) + ")");
    }
  }
  std::vector<GpsPoint> points;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_csv(body);
    if (fields.size() < 7) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 7 PLT fields, found " +
                        std::to_string(fields.size()));
    }
    GpsPoint p;
    p.lat = parse_double(fields[0], line_no, "latitude");
    p.lon = parse_double(fields[1], line_no, "longitude");
    p.timestamp = parse_double(fields[4], line_no, "day count") * kSecondsPerDay;
    validate_at(p, line_no);
    if (!points.empty() && !(p.timestamp > points.back().timestamp)) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": timestamps must be strictly increasing; trajectory rejected");
    }
    points.push_back(p);
  }
  return points;
}

void write_geolife_plt(std::ostream& out, const std::vector<GpsPoint>& points) {
  out << "Geolife trajectory\r\nWGS 84\r\nAltitude is in Feet\r\nReserved 3\r\n"
         "0,2,255,My Track,0,0,2,8421376\r\n0\r\n";
  using namespace std::chrono;
  const sys_days excel_epoch = sys_days(year(1899) / December / 30);
  char buf[160];
  for (const auto& p : points) {
    const double days = p.timestamp / kSecondsPerDay;
    const auto whole = static_cast<long>(std::floor(days));
    const year_month_day ymd(excel_epoch + std::chrono::days(whole));
    const long secs = std::lround((days - static_cast<double>(whole)) * kSecondsPerDay) % 86400;
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,0,0,%.10f,%04d-%02u-%02u,%02ld:%02ld:%02ld\r\n", p.lat, p.lon,
                  days, static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), secs / 3600, (secs / 60) % 60, secs % 60);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Trajectory CSV

std::vector<Trajectory> parse_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("trajectory CSV is empty (missing header)");
  const auto header = split_csv(trim(line));
  if (header.size() < 4 || header[0] != "traj_id" || header[1] != "timestamp" || header[2] != "lat" ||
      header[3] != "lon") {
    throw FormatError("trajectory CSV header must start with traj_id,timestamp,lat,lon");
  }
  const bool has_label = header.size() >= 5 && header[4] == "label";
  std::vector<Trajectory> out;
  std::map<std::string, std::size_t, std::less<>> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_csv(body);
    if (fields.size() < (has_label ? 5u : 4u)) {
      throw FormatError("line " + std::to_string(line_no) + ": too few fields");
    }
    auto it = index.find(fields[0]);
    if (it == index.end()) {
      it = index.emplace(std::string(fields[0]), out.size()).first;
      out.push_back({std::string(fields[0]), std::nullopt, {}});
    }
    Trajectory& t = out[it->second];
    GpsPoint p;
    p.timestamp = parse_double(fields[1], line_no, "timestamp");
    p.lat = parse_double(fields[2], line_no, "latitude");
    p.lon = parse_double(fields[3], line_no, "longitude");
    validate_at(p, line_no);
    if (!t.points.empty() && !(p.timestamp > t.points.back().timestamp)) {
      throw FormatError("line " + std::to_string(line_no) + ": timestamps of trajectory '" + t.id +
                        "' must be strictly increasing");
    }
    if (has_label) {
      const int label = static_cast<int>(parse_double(fields[4], line_no, "label"));
      if (t.label && *t.label != label) {
        throw FormatError("line " + std::to_string(line_no) + ": trajectory '" + t.id + "' changes label");
      }
      t.label = label;
    }
    t.points.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Velocities and segmentation

std::vector<Velocity> compute_velocities(const std::vector<GpsPoint>& points) {
  if (points.size() < 2) throw ValidationError("velocities need at least 2 points");
  std::vector<Velocity> v(points.size());
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double dt = points[i + 1].timestamp - points[i].timestamp;
    if (!(dt > 0.0)) {
      throw ValidationError("non-positive time step between points " + std::to_string(i) + " and " +
                            std::to_string(i + 1));
    }
    v[i] = {(points[i + 1].lat - points[i].lat) / dt, (points[i + 1].lon - points[i].lon) / dt};
  }
  v.back() = v[v.size() - 2];
  return v;
}

std::vector<Segment> segment_trip(const std::vector<GpsPoint>& points, const std::vector<Velocity>& velocities,
                                  std::size_t length, std::size_t stride, const std::string& source, int label) {
  if (stride < 1) throw ConfigError("segment stride must be >= 1");
  if (length < 1) throw ConfigError("segment length must be >= 1");
  if (points.size() != velocities.size()) throw DimensionError("points and velocities differ in length");
  std::vector<Segment> out;
  for (std::size_t start = 0; start + length <= points.size(); start += stride) {
    std::vector<double> values(4 * length);
    for (std::size_t j = 0; j < length; ++j) {
      const GpsPoint& p = points[start + j];
      const Velocity& v = velocities[start + j];
      values[j] = p.lat;
      values[length + j] = p.lon;
      values[2 * length + j] = v.vlat;
      values[3 * length + j] = v.vlon;
    }
    Segment s;
    s.values = Tensor({4, length}, std::move(values));
    s.source = source.empty() ? std::string() : source + "@" + std::to_string(start);
    s.label = label;
    out.push_back(std::move(s));
  }
  return out;
}

double max_step_displacement(const Segment& s) {
  const std::size_t n = s.length();
  const auto data = s.values.data();
  double worst = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double dlat = data[j + 1] - data[j];
    const double dlon = data[n + j + 1] - data[n + j];
    worst = std::max(worst, std::hypot(dlat, dlon));
  }
  return worst;
}

std::vector<Segment> filter_gps_noise(std::vector<Segment> segments, double threshold) {
  std::erase_if(segments, [threshold](const Segment& s) { return max_step_displacement(s) > threshold; });
  return segments;
}

// ---------------------------------------------------------------------------
// Normalization

void to_json(nlohmann::json& j, const ChannelStats& s) {
  j = nlohmann::json{{"mean", s.mean}, {"stddev", s.stddev}, {"degenerate", s.degenerate}, {"epsilon", s.epsilon}};
}

void from_json(const nlohmann::json& j, ChannelStats& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.degenerate = j.at("degenerate").get<std::vector<bool>>();
  s.epsilon = j.value("epsilon", 1e-12);
}

namespace {

Segment map_channels(const Segment& s, const ChannelStats& stats, bool forward) {
  const std::size_t c = s.values.shape().at(0);
  if (c != stats.mean.size()) throw DimensionError("segment channel count does not match channel stats");
  const std::size_t n = s.values.size() / c;
  std::vector<double> out(s.values.data().begin(), s.values.data().end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < n; ++j) {
      double& v = out[ch * n + j];
      if (stats.degenerate[ch]) {
        v = forward ? 0.0 : stats.mean[ch];
      } else {
        v = forward ? (v - stats.mean[ch]) / stats.stddev[ch] : v * stats.stddev[ch] + stats.mean[ch];
      }
    }
  }
  Segment r = s;
  r.values = Tensor(s.values.shape(), std::move(out));
  return r;
}

}  // namespace

Normalized normalize_segments(const std::vector<Segment>& segments) {
  if (segments.empty()) throw ConfigError("cannot normalize an empty segment set");
  const std::size_t c = segments.front().values.shape().at(0);
  std::vector<double> sum(c, 0.0), count(c, 0.0);
  for (const auto& s : segments) {
    if (s.values.shape() != segments.front().values.shape()) {
      throw DimensionError("segments must share one shape");
    }
    const std::size_t n = s.values.size() / c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < n; ++j) sum[ch] += s.values[ch * n + j];
      count[ch] += static_cast<double>(n);
    }
  }
  ChannelStats stats;
  stats.mean.resize(c);
  stats.stddev.resize(c);
  stats.degenerate.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) stats.mean[ch] = sum[ch] / count[ch];
  std::vector<double> sq(c, 0.0);
  for (const auto& s : segments) {
    const std::size_t n = s.values.size() / c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = s.values[ch * n + j] - stats.mean[ch];
        sq[ch] += d * d;
      }
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double sd = std::sqrt(sq[ch] / count[ch]);
    stats.degenerate[ch] = !(sd > stats.epsilon * std::max(1.0, std::abs(stats.mean[ch])));
    stats.stddev[ch] = stats.degenerate[ch] ? 1.0 : sd;
  }
  return {apply_normalization(segments, stats), stats};
}

std::vector<Segment> apply_normalization(const std::vector<Segment>& segments, const ChannelStats& stats) {
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(map_channels(s, stats, true));
  return out;
}

std::vector<Segment> denormalize(const std::vector<Segment>& segments, const ChannelStats& stats) {
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(map_channels(s, stats, false));
  return out;
}

Matrix stack_segments(const std::vector<Segment>& segments) {
  if (segments.empty()) return Matrix(0, 0);
  const std::size_t width = segments.front().values.size();
  Matrix m(static_cast<Eigen::Index>(segments.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].values.size() != width) throw DimensionError("segments must share one shape");
    std::copy(segments[i].values.data().begin(), segments[i].values.data().end(),
              m.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic trips

const char* to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::none: return "none";
    case AnomalyType::detour: return "detour";
    case AnomalyType::speed_shift: return "speed-shift";
    case AnomalyType::gps_noise: return "gps-noise";
  }
  return "?";
}

AnomalyType anomaly_type_from_string(const std::string& s) {
  if (s == "none") return AnomalyType::none;
  if (s == "detour") return AnomalyType::detour;
  if (s == "speed-shift" || s == "speed_shift") return AnomalyType::speed_shift;
  if (s == "gps-noise" || s == "gps_noise") return AnomalyType::gps_noise;
  throw ConfigError("unknown anomaly type '" + s + "'");
}

void SyntheticSpec::validate() const {
  if (modes < 1) throw ConfigError("synthetic spec needs at least one mode");
  if (!templates.empty() && templates.size() != modes) {
    throw ConfigError("synthetic spec lists " + std::to_string(templates.size()) + " templates for " +
                      std::to_string(modes) + " modes");
  }
  for (const auto& t : templates) {
    if (t.waypoints.size() < 2) throw ConfigError("mode template needs at least 2 waypoints");
    if (!(t.speed > 0.0)) throw ConfigError("mode template speed must be positive");
  }
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction < 1.0)) {
    throw ConfigError("anomaly fraction must lie in [0,1)");
  }
  if (anomaly_fraction > 0.0 && anomaly_types.empty()) throw ConfigError("anomaly fraction > 0 needs anomaly types");
  if (anomaly_types.count(AnomalyType::none)) throw ConfigError("'none' is not an anomaly type");
  if (segment_length < 2) throw ConfigError("segments need at least 2 points");
  if (segments < 1) throw ConfigError("segment count must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  if (gps_noise_factor < 50.0) throw ConfigError("gps-noise scale must be at least 50x jitter");
}

std::vector<ModeTemplate> SyntheticSpec::resolved_templates() const {
  if (!templates.empty()) return templates;
  // Parallel commuter routes through a city center, driven at different
  // speeds. Slot i has lateral offset and speed increasing with i; the middle
  // slot is assigned to the last mode, so with K = 3 the last mode lies
  // between the other two in both position and speed.
  constexpr double kCenterLat = 39.98, kCenterLon = 116.33;
  constexpr double kSpacing = 0.0003, kHalfLength = 0.05;
  constexpr double kSlowSpeed = 1e-4, kSpeedRatio = 3.0;
  std::vector<int> slots(modes);
  std::iota(slots.begin(), slots.end(), 0);
  if (modes >= 3) {
    const auto mid = slots.begin() + static_cast<long>((modes - 1) / 2);
    std::rotate(mid, mid + 1, slots.end());
  }
  std::vector<ModeTemplate> out;
  for (std::size_t k = 0; k < modes; ++k) {
    const double pos = modes == 1 ? 0.0 : static_cast<double>(slots[k]) / static_cast<double>(modes - 1);
    const double lat = kCenterLat + (pos - 0.5) * static_cast<double>(modes - 1) * kSpacing;
    ModeTemplate t;
    t.waypoints = {{lat, kCenterLon - kHalfLength},
                   {lat + 0.004, kCenterLon - 0.5 * kHalfLength},
                   {lat - 0.004, kCenterLon},
                   {lat + 0.004, kCenterLon + 0.5 * kHalfLength},
                   {lat, kCenterLon + kHalfLength}};
    t.speed = kSlowSpeed * std::pow(kSpeedRatio, pos);
    t.speed_variation = 0.1;
    out.push_back(std::move(t));
  }
  return out;
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  auto templates = nlohmann::json::array();
  for (const auto& t : s.templates) {
    auto wps = nlohmann::json::array();
    for (const auto& [lat, lon] : t.waypoints) wps.push_back({lat, lon});
    templates.push_back({{"waypoints", wps}, {"speed", t.speed}, {"speed_variation", t.speed_variation}});
  }
  auto types = nlohmann::json::array();
  for (auto t : s.anomaly_types) types.push_back(to_string(t));
  j = nlohmann::json{{"modes", s.modes},
                     {"templates", templates},
                     {"segment_length", s.segment_length},
                     {"segments", s.segments},
                     {"dt", s.dt},
                     {"jitter", s.jitter},
                     {"anomaly_types", types},
                     {"anomaly_fraction", s.anomaly_fraction},
                     {"detour_amplitude", s.detour_amplitude},
                     {"gps_noise_factor", s.gps_noise_factor},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.modes = j.value("modes", s.modes);
  if (j.contains("templates")) {
    for (const auto& jt : j.at("templates")) {
      ModeTemplate t;
      for (const auto& wp : jt.at("waypoints")) t.waypoints.emplace_back(wp.at(0).get<double>(), wp.at(1).get<double>());
      t.speed = jt.value("speed", t.speed);
      t.speed_variation = jt.value("speed_variation", t.speed_variation);
      s.templates.push_back(std::move(t));
    }
  }
  s.segment_length = j.value("segment_length", s.segment_length);
  s.segments = j.value("segments", s.segments);
  s.dt = j.value("dt", s.dt);
  s.jitter = j.value("jitter", s.jitter);
  if (j.contains("anomaly_types")) {
    s.anomaly_types.clear();
    for (const auto& t : j.at("anomaly_types")) s.anomaly_types.insert(anomaly_type_from_string(t.get<std::string>()));
  }
  s.anomaly_fraction = j.value("anomaly_fraction", s.anomaly_fraction);
  s.detour_amplitude = j.value("detour_amplitude", s.detour_amplitude);
  s.gps_noise_factor = j.value("gps_noise_factor", s.gps_noise_factor);
  s.seed = j.value("seed", s.seed);
}

namespace {

/// Catmull-Rom spline through the waypoints, resampled as a dense polyline
/// with cumulative arc length. Positions beyond either end extrapolate along
/// the end tangent.
class Route {
 public:
  explicit Route(const std::vector<std::pair<double, double>>& wp) {
    constexpr int kSamplesPerSpan = 32;
    const std::size_t n = wp.size();
    auto at = [&](long i) { return wp[static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1))]; };
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto p0 = at(static_cast<long>(i) - 1), p1 = at(static_cast<long>(i)), p2 = at(static_cast<long>(i) + 1),
                 p3 = at(static_cast<long>(i) + 2);
      for (int k = 0; k < kSamplesPerSpan; ++k) {
        const double t = static_cast<double>(k) / kSamplesPerSpan;
        const double t2 = t * t, t3 = t2 * t;
        auto cr = [&](double a, double b, double c, double d) {
          return 0.5 * (2 * b + (-a + c) * t + (2 * a - 5 * b + 4 * c - d) * t2 + (-a + 3 * b - 3 * c + d) * t3);
        };
        pts_.emplace_back(cr(p0.first, p1.first, p2.first, p3.first), cr(p0.second, p1.second, p2.second, p3.second));
      }
    }
    pts_.push_back(wp.back());
    arc_.assign(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      arc_[i] = arc_[i - 1] + std::hypot(pts_[i].first - pts_[i - 1].first, pts_[i].second - pts_[i - 1].second);
    }
  }

  double length() const { return arc_.back(); }

  /// Position and unit tangent at arc length s.
  std::pair<std::pair<double, double>, std::pair<double, double>> at(double s) const {
    std::size_t i;
    if (s <= 0.0) {
      i = 0;
    } else if (s >= length()) {
      i = pts_.size() - 2;
    } else {
      i = static_cast<std::size_t>(std::upper_bound(arc_.begin(), arc_.end(), s) - arc_.begin()) - 1;
      i = std::min(i, pts_.size() - 2);
    }
    const double seg = arc_[i + 1] - arc_[i];
    const double tx = (pts_[i + 1].first - pts_[i].first) / seg;
    const double ty = (pts_[i + 1].second - pts_[i].second) / seg;
    const double u = s - arc_[i];
    return {{pts_[i].first + tx * u, pts_[i].second + ty * u}, {tx, ty}};
  }

 private:
  std::vector<std::pair<double, double>> pts_;
  std::vector<double> arc_;
};

}  // namespace

std::vector<Segment> generate_synthetic_trips(const SyntheticSpec& spec) {
  spec.validate();
  const auto templates = spec.resolved_templates();
  std::vector<Route> routes;
  for (const auto& t : templates) routes.emplace_back(t.waypoints);

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.segment_length;
  const std::size_t total = spec.segments;

  std::vector<int> modes(total);
  for (std::size_t i = 0; i < total; ++i) modes[i] = static_cast<int>(i % spec.modes);
  std::shuffle(modes.begin(), modes.end(), rng);

  std::vector<AnomalyType> kinds(total, AnomalyType::none);
  const auto n_anomalies = static_cast<std::size_t>(std::llround(spec.anomaly_fraction * static_cast<double>(total)));
  if (n_anomalies > 0) {
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<AnomalyType> types(spec.anomaly_types.begin(), spec.anomaly_types.end());
    for (std::size_t a = 0; a < n_anomalies; ++a) kinds[order[a]] = types[a % types.size()];
  }

  std::vector<Segment> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const ModeTemplate& tmpl = templates[static_cast<std::size_t>(modes[i])];
    const Route& route = routes[static_cast<std::size_t>(modes[i])];
    const AnomalyType kind = kinds[i];

    // Smooth speed profile: base speed with a slow sinusoidal modulation.
    const double base = tmpl.speed * (1.0 + tmpl.speed_variation * (2.0 * unit(rng) - 1.0));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double cycles = 0.5 + unit(rng);
    std::vector<double> step(n - 1);
    for (std::size_t j = 0; j + 1 < n; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(n);
      step[j] = base * spec.dt * (1.0 + 0.2 * std::sin(2.0 * std::numbers::pi * cycles * t + phase));
    }
    if (kind == AnomalyType::speed_shift) {
      const std::size_t from = n / 4 + static_cast<std::size_t>(unit(rng) * static_cast<double>(n / 2));
      const double factor = unit(rng) < 0.5 ? 2.0 + 2.0 * unit(rng) : 0.25 + 0.25 * unit(rng);
      for (std::size_t j = from; j + 1 < n; ++j) step[j] *= factor;
    }
    const double span = std::accumulate(step.begin(), step.end(), 0.0);
    const double start = unit(rng) * std::max(0.0, route.length() - span);

    std::vector<double> lat(n), lon(n);
    double s = start;
    for (std::size_t j = 0; j < n; ++j) {
      const auto [pos, tangent] = route.at(s);
      lat[j] = pos.first;
      lon[j] = pos.second;
      if (j + 1 < n) s += step[j];
    }

    if (kind == AnomalyType::detour) {
      const std::size_t width = n / 4 + static_cast<std::size_t>(unit(rng) * static_cast<double>(n / 4 + 1));
      const std::size_t from = static_cast<std::size_t>(unit(rng) * static_cast<double>(n - width + 1));
      const double amp = spec.detour_amplitude * (0.7 + 0.6 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
      double s_local = start;
      for (std::size_t j = 0; j < n; ++j) {
        if (j >= from && j < from + width) {
          const auto [pos, tangent] = route.at(s_local);
          const double bump = std::sin(std::numbers::pi * (static_cast<double>(j - from) + 0.5) / static_cast<double>(width));
          // Perpendicular to the local direction of travel.
          lat[j] += -tangent.second * amp * bump;
          lon[j] += tangent.first * amp * bump;
        }
        if (j + 1 < n) s_local += step[j];
      }
    }

    for (std::size_t j = 0; j < n; ++j) {
      lat[j] += spec.jitter * normal(rng);
      lon[j] += spec.jitter * normal(rng);
    }

    if (kind == AnomalyType::gps_noise) {
      const double scale = spec.gps_noise_factor * std::max(spec.jitter, 1e-6);
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        const bool hit = unit(rng) < 0.25;
        if (hit || (!any && j + 1 == n)) {
          lat[j] += scale * normal(rng);
          lon[j] += scale * normal(rng);
          any = true;
        }
      }
    }

    std::vector<double> values(4 * n);
    for (std::size_t j = 0; j < n; ++j) {
      values[j] = lat[j];
      values[n + j] = lon[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = j + 1 < n ? j : j - 1;
      values[2 * n + j] = (lat[k + 1] - lat[k]) / spec.dt;
      values[3 * n + j] = (lon[k + 1] - lon[k]) / spec.dt;
    }
    for (std::size_t j = 0; j < n; ++j) validate_point({0.0, lat[j], lon[j]});

    Segment seg;
    seg.values = Tensor({4, n}, std::move(values));
    seg.source = "synthetic-" + std::to_string(i);
    seg.label = modes[i];
    seg.anomaly = kind;
    out.push_back(std::move(seg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MNIST IDX

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4) throw FormatError(std::string("IDX file truncated in ") + what);
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) v = (v << 8) | static_cast<unsigned char>(bytes[offset + k]);
  return v;
}

void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<Segment> parse_mnist_idx(const std::string& image_bytes, const std::string& label_bytes) {
  if (read_be32(image_bytes, 0, "image header") != 2051) throw FormatError("image file magic is not 2051");
  if (read_be32(label_bytes, 0, "label header") != 2049) throw FormatError("label file magic is not 2049");
  const std::size_t count = read_be32(image_bytes, 4, "image header");
  const std::size_t rows = read_be32(image_bytes, 8, "image header");
  const std::size_t cols = read_be32(image_bytes, 12, "image header");
  const std::size_t label_count = read_be32(label_bytes, 4, "label header");
  if (count != label_count) {
    throw FormatError("image count " + std::to_string(count) + " != label count " + std::to_string(label_count));
  }
  if (rows == 0 || cols == 0) throw FormatError("image dimensions must be positive");
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + count * pixels) throw FormatError("image file truncated");
  if (label_bytes.size() < 8 + count) throw FormatError("label file truncated");
  std::vector<Segment> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<unsigned char>(label_bytes[8 + i]);
    if (label > 9) throw FormatError("label " + std::to_string(label) + " at index " + std::to_string(i) + " is not a digit");
    std::vector<double> values(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      values[p] = static_cast<unsigned char>(image_bytes[16 + i * pixels + p]) / 255.0;
    }
    Segment s;
    s.values = Tensor({rows, cols}, std::move(values));
    s.source = "mnist-" + std::to_string(i);
    s.label = label;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Segment> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_mnist_idx(slurp(images), slurp(labels));
}

std::pair<std::string, std::string> encode_mnist_idx(const std::vector<Segment>& images) {
  std::string img, lab;
  const std::size_t rows = images.empty() ? 28 : images.front().values.shape().at(0);
  const std::size_t cols = images.empty() ? 28 : images.front().values.shape().at(1);
  write_be32(img, 2051);
  write_be32(img, static_cast<std::uint32_t>(images.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  write_be32(lab, 2049);
  write_be32(lab, static_cast<std::uint32_t>(images.size()));
  for (const auto& s : images) {
    for (double v : s.values.data()) img.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    lab.push_back(static_cast<char>(s.label));
  }
  return {img, lab};
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplit make_holdout_split(const std::vector<Segment>& segments, int anomaly_class, double ratio,
                                std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0,1)");
  const bool present = std::any_of(segments.begin(), segments.end(),
                                   [&](const Segment& s) { return s.label == anomaly_class; });
  if (!present) throw ValidationError("anomaly class " + std::to_string(anomaly_class) + " is absent");

  std::vector<std::size_t> normal;
  std::vector<char> to_test(segments.size(), 0);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].label == anomaly_class || segments[i].anomaly != AnomalyType::none) {
      to_test[i] = 1;
    } else {
      normal.push_back(i);
    }
  }
  Rng rng(seed);
  std::shuffle(normal.begin(), normal.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(normal.size())));
  for (std::size_t k = n_train; k < normal.size(); ++k) to_test[normal[k]] = 1;

  DatasetSplit split;
  split.ratio = ratio;
  split.anomaly_class = anomaly_class;
  for (std::size_t k = 0; k < n_train; ++k) split.train.push_back(segments[normal[k]]);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!to_test[i]) continue;
    Segment s = segments[i];
    s.test_only = true;
    split.test_labels.push_back(s.label == anomaly_class || s.anomaly != AnomalyType::none ? 1 : 0);
    split.test.push_back(std::move(s));
  }
  return split;
}

Matrix training_matrix(const std::vector<Segment>& segments) {
  for (const auto& s : segments) {
    if (s.test_only) throw ConfigError("test segment '" + s.source + "' cannot be used for fitting");
  }
  return stack_segments(segments);
}

// ---------------------------------------------------------------------------
// Segment archive

namespace {
std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".labels.json"; }
}  // namespace

void write_segment_archive(const std::filesystem::path& path, const std::vector<Segment>& segments,
                           const std::optional<ChannelStats>& stats) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(segments.size());
  nlohmann::json meta;
  meta["segments"] = nlohmann::json::array();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    NamedTensor t;
    t.name = "segment/" + std::to_string(i);
    for (auto d : s.values.shape()) t.shape.push_back(d);
    t.values.assign(s.values.data().begin(), s.values.data().end());
    tensors.push_back(std::move(t));
    meta["segments"].push_back({{"source", s.source}, {"label", s.label}, {"anomaly", to_string(s.anomaly)}});
  }
  if (stats) meta["channel_stats"] = *stats;
  write_weights(path, tensors);
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + sidecar_path(path).string());
  out << meta.dump(2) << '\n';
}

std::vector<Segment> read_segment_archive(const std::filesystem::path& path, std::optional<ChannelStats>* stats) {
  const auto tensors = read_weights(path);
  std::ifstream in(sidecar_path(path));
  if (!in) throw FormatError("missing segment sidecar " + sidecar_path(path).string());
  const auto meta = nlohmann::json::parse(in);
  const auto& entries = meta.at("segments");
  if (entries.size() != tensors.size()) throw FormatError("segment sidecar does not match the archive");
  std::vector<Segment> out;
  out.reserve(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Segment s;
    std::vector<std::size_t> shape(tensors[i].shape.begin(), tensors[i].shape.end());
    s.values = Tensor(std::move(shape), tensors[i].values);
    s.source = entries[i].value("source", std::string());
    s.label = entries[i].value("label", -1);
    s.anomaly = anomaly_type_from_string(entries[i].value("anomaly", std::string("none")));
    out.push_back(std::move(s));
  }
  if (stats) {
    *stats = meta.contains("channel_stats") ? std::optional<ChannelStats>(meta.at("channel_stats").get<ChannelStats>())
                                            : std::nullopt;
  }
  return out;
}

}  // namespace igmmgan
