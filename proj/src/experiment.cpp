#include "igmmgan/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "igmmgan/error.hpp"
#include "igmmgan/hash.hpp"
#include "igmmgan/weights_io.hpp"

namespace igmmgan {

// ---------------------------------------------------------------------------
// ROC

namespace {

void check_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("score is NaN");
  }
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives, so tied groups get integer mid-ranks.
  std::uint64_t rank2_sum = 0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t mid2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank2_sum += mid2;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw ValidationError("ROC AUC needs both classes");
  const std::uint64_t u2 = rank2_sum - positives * (positives + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * positives * negatives);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_binary(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw ValidationError("ROC curve needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                     static_cast<double>(tp) / static_cast<double>(positives), threshold});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Spec

const char* to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::trajectory_csv: return "trajectory-csv";
    case DataSource::plt_dir: return "plt-dir";
    case DataSource::mnist: return "mnist";
  }
  return "?";
}

DataSource data_source_from_string(const std::string& s) {
  if (s == "synthetic") return DataSource::synthetic;
  if (s == "trajectory-csv") return DataSource::trajectory_csv;
  if (s == "plt-dir") return DataSource::plt_dir;
  if (s == "mnist") return DataSource::mnist;
  throw ConfigError("unknown dataset source '" + s + "' (synthetic, trajectory-csv, plt-dir, mnist)");
}

void ExperimentSpec::validate() const {
  if (source == DataSource::synthetic) {
    synthetic.validate();
  } else if (input.empty()) {
    throw ConfigError(std::string("dataset source '") + to_string(source) + "' needs an input path");
  }
  if (source == DataSource::mnist && (mnist_digits.empty() || mnist_per_class == 0)) {
    throw ConfigError("MNIST source needs digits and a positive per-class count");
  }
  if (segment_length < 2 || stride < 1) throw ConfigError("segment length must be >= 2 and stride >= 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split ratio must lie in (0,1)");
  if (prior.mode != "preset" && prior.mode != "explicit" && prior.mode != "tune") {
    throw ConfigError("prior mode must be preset, explicit or tune");
  }
  if (prior.mode == "preset" && prior.preset != "trajectory" && prior.preset != "image") {
    throw ConfigError("prior preset must be 'trajectory' or 'image'");
  }
  if (prior.mode == "explicit") DofRule::parse(prior.dof);
  for (double w : egbad_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("EGBAD weights must lie in [0,1]");
  }
  bigan.validate();
  igmm.validate();
  if (output.empty()) throw ConfigError("output directory is empty");
}

namespace {
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t ExperimentSpec::data_seed() const { return mix_seed(seed, 0); }
std::uint64_t ExperimentSpec::split_seed() const { return mix_seed(seed, 1); }
std::uint64_t ExperimentSpec::bigan_seed() const { return mix_seed(seed, 2); }
std::uint64_t ExperimentSpec::igmm_seed() const { return mix_seed(seed, 3); }

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  auto dofs = nlohmann::json::array();
  for (const auto& d : s.prior.grid.dof) dofs.push_back(d.text);
  j = nlohmann::json{
      {"source", to_string(s.source)},
      {"synthetic", s.synthetic},
      {"input", s.input.string()},
      {"mnist", {{"digits", s.mnist_digits}, {"per_class", s.mnist_per_class}}},
      {"segment_length", s.segment_length},
      {"stride", s.stride},
      {"filter_gps_noise", s.filter_gps_noise},
      {"gps_noise_threshold", s.gps_noise_threshold},
      {"holdout_class", s.holdout_class},
      {"split_ratio", s.split_ratio},
      {"bigan", s.bigan},
      {"prior",
       {{"mode", s.prior.mode},
        {"preset", s.prior.preset},
        {"kappa0", s.prior.kappa0},
        {"dof", s.prior.dof},
        {"scale", s.prior.scale},
        {"grid", {{"kappa0", s.prior.grid.kappa0}, {"dof", dofs}, {"scale", s.prior.grid.scale}}},
        {"coarse", {{"sweeps", s.prior.coarse_sweeps}, {"burnin", s.prior.coarse_burnin}, {"thin", s.prior.coarse_thin}}}}},
      {"igmm",
       {{"alpha", s.igmm.alpha},
        {"sweeps", s.igmm.sweeps},
        {"burnin", s.igmm.burnin},
        {"thin", s.igmm.thin},
        {"min_cluster_size", s.igmm.min_cluster_size},
        {"extraction", s.igmm.extraction == ComponentExtraction::empirical ? "empirical" : "posterior-mean"}}},
      {"egbad_weights", s.egbad_weights},
      {"seed", s.seed},
      {"output", s.output.string()},
      {"threads", s.threads},
  };
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  static const std::vector<std::string> known = {
      "source", "synthetic", "input", "mnist", "segment_length", "stride", "filter_gps_noise",
      "gps_noise_threshold", "holdout_class", "split_ratio", "bigan", "prior", "igmm", "egbad_weights",
      "seed", "output", "threads", "$schema", "description"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown experiment key '" + key + "'");
    }
  }
  s = ExperimentSpec{};
  s.source = data_source_from_string(j.value("source", std::string("synthetic")));
  if (j.contains("synthetic")) s.synthetic = j.at("synthetic").get<SyntheticSpec>();
  s.input = j.value("input", std::string());
  if (j.contains("mnist")) {
    s.mnist_digits = j.at("mnist").value("digits", s.mnist_digits);
    s.mnist_per_class = j.at("mnist").value("per_class", s.mnist_per_class);
  }
  s.segment_length = j.value("segment_length", s.segment_length);
  s.stride = j.value("stride", s.stride);
  s.filter_gps_noise = j.value("filter_gps_noise", s.filter_gps_noise);
  s.gps_noise_threshold = j.value("gps_noise_threshold", s.gps_noise_threshold);
  s.holdout_class = j.value("holdout_class", s.holdout_class);
  s.split_ratio = j.value("split_ratio", s.split_ratio);
  if (j.contains("bigan")) s.bigan = j.at("bigan").get<BiGANConfig>();
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    if (p.is_string()) {
      const auto name = p.get<std::string>();
      if (name == "tune") {
        s.prior.mode = "tune";
      } else {
        s.prior.mode = "preset";
        s.prior.preset = name;
      }
    } else {
      s.prior.mode = p.value("mode", s.prior.mode);
      s.prior.preset = p.value("preset", s.prior.preset);
      s.prior.kappa0 = p.value("kappa0", s.prior.kappa0);
      s.prior.dof = p.value("dof", s.prior.dof);
      s.prior.scale = p.value("scale", s.prior.scale);
      if (p.contains("grid")) {
        const auto& g = p.at("grid");
        s.prior.grid.kappa0 = g.value("kappa0", s.prior.grid.kappa0);
        s.prior.grid.scale = g.value("scale", s.prior.grid.scale);
        if (g.contains("dof")) {
          s.prior.grid.dof.clear();
          for (const auto& d : g.at("dof")) s.prior.grid.dof.push_back(DofRule::parse(d.get<std::string>()));
        }
      }
      if (p.contains("coarse")) {
        const auto& c = p.at("coarse");
        s.prior.coarse_sweeps = c.value("sweeps", s.prior.coarse_sweeps);
        s.prior.coarse_burnin = c.value("burnin", s.prior.coarse_burnin);
        s.prior.coarse_thin = c.value("thin", s.prior.coarse_thin);
      }
    }
  }
  if (j.contains("igmm")) {
    const auto& g = j.at("igmm");
    s.igmm.alpha = g.value("alpha", s.igmm.alpha);
    s.igmm.sweeps = g.value("sweeps", s.igmm.sweeps);
    s.igmm.burnin = g.value("burnin", s.igmm.burnin);
    s.igmm.thin = g.value("thin", s.igmm.thin);
    s.igmm.min_cluster_size = g.value("min_cluster_size", s.igmm.min_cluster_size);
    const auto ex = g.value("extraction", std::string("empirical"));
    if (ex == "empirical") {
      s.igmm.extraction = ComponentExtraction::empirical;
    } else if (ex == "posterior-mean") {
      s.igmm.extraction = ComponentExtraction::posterior_mean;
    } else {
      throw ConfigError("IGMM extraction must be 'empirical' or 'posterior-mean'");
    }
  }
  s.egbad_weights = j.value("egbad_weights", s.egbad_weights);
  s.seed = j.value("seed", s.seed);
  s.output = j.value("output", s.output.string());
  s.threads = j.value("threads", s.threads);
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return j.get<ExperimentSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config file '" + path.string() + "': " + e.what());
  }
}

std::size_t resolve_threads(std::size_t requested) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IGMMGAN_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) cap = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("IGMMGAN_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return requested == 0 ? cap : std::min(requested, cap);
}

namespace {

std::vector<std::filesystem::path> plt_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".plt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::pair<std::filesystem::path, std::filesystem::path> mnist_files(const std::filesystem::path& dir) {
  for (const char* stem : {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}) {
    const auto images = dir / stem;
    if (std::filesystem::exists(images)) {
      std::string labels = stem;
      labels.replace(labels.find("images"), 6, "labels");
      labels.replace(labels.find("idx3"), 4, "idx1");
      return {images, dir / labels};
    }
  }
  throw ConfigError("no train-images-idx3-ubyte under '" + dir.string() + "'");
}

}  // namespace

std::string config_hash(const ExperimentSpec& spec) {
  nlohmann::json j = spec;
  j.erase("output");
  j.erase("threads");
  std::string material = j.dump();
  if (spec.source == DataSource::trajectory_csv) {
    material += sha256_file(spec.input);
  } else if (spec.source == DataSource::plt_dir) {
    for (const auto& f : plt_files(spec.input)) {
      material += std::filesystem::relative(f, spec.input).generic_string() + sha256_file(f);
    }
  } else if (spec.source == DataSource::mnist) {
    const auto [images, labels] = mnist_files(spec.input);
    material += sha256_file(images) + sha256_file(labels);
  }
  return sha256_hex(material);
}

namespace {

int geolife_user(const std::filesystem::path& file, const std::filesystem::path& root, int fallback) {
  // <root>/<user>/Trajectory/<file>.plt
  auto rel = std::filesystem::relative(file, root);
  if (rel.begin() != rel.end()) {
    const std::string first = rel.begin()->string();
    if (!first.empty() && std::all_of(first.begin(), first.end(), ::isdigit)) return std::stoi(first);
  }
  return fallback;
}

std::vector<Segment> segment_points(const std::vector<GpsPoint>& pts, const ExperimentSpec& spec,
                                    const std::string& source, int label) {
  if (pts.size() < std::max<std::size_t>(2, spec.segment_length)) return {};
  return segment_trip(pts, compute_velocities(pts), spec.segment_length, spec.stride, source, label);
}

}  // namespace

std::vector<Segment> load_dataset(const ExperimentSpec& spec) {
  std::vector<Segment> segments;
  switch (spec.source) {
    case DataSource::synthetic: {
      SyntheticSpec s = spec.synthetic;
      s.seed = spec.data_seed();
      segments = generate_synthetic_trips(s);
      break;
    }
    case DataSource::trajectory_csv: {
      std::ifstream in(spec.input);
      if (!in) throw ConfigError("cannot open trajectory CSV '" + spec.input.string() + "'");
      for (const auto& t : parse_trajectory_csv(in)) {
        auto part = segment_points(t.points, spec, t.id, t.label.value_or(-1));
        segments.insert(segments.end(), part.begin(), part.end());
      }
      break;
    }
    case DataSource::plt_dir: {
      int index = 0;
      for (const auto& f : plt_files(spec.input)) {
        std::ifstream in(f);
        std::vector<GpsPoint> pts;
        try {
          pts = parse_geolife_plt(in);
        } catch (const Error& e) {
          throw FormatError(f.string() + ": " + e.what());
        }
        auto part = segment_points(pts, spec, f.stem().string(), geolife_user(f, spec.input, index++));
        segments.insert(segments.end(), part.begin(), part.end());
      }
      break;
    }
    case DataSource::mnist: {
      const auto [images, labels] = mnist_files(spec.input);
      std::map<int, std::size_t> taken;
      for (auto& s : load_mnist_idx(images, labels)) {
        if (std::find(spec.mnist_digits.begin(), spec.mnist_digits.end(), s.label) == spec.mnist_digits.end()) continue;
        if (taken[s.label]++ >= spec.mnist_per_class) continue;
        segments.push_back(std::move(s));
      }
      break;
    }
  }
  if (spec.filter_gps_noise && spec.source != DataSource::mnist) {
    segments = filter_gps_noise(std::move(segments), spec.gps_noise_threshold);
  }
  if (segments.empty()) throw ValidationError("dataset produced no segments");
  return segments;
}

// ---------------------------------------------------------------------------
// Preparation

Matrix model_inputs(const std::vector<Segment>& segments, DataSource source,
                    const std::optional<ChannelStats>& stats) {
  if (source == DataSource::mnist) return (2.0 * stack_segments(segments).array() - 1.0).matrix();
  if (!stats) throw ConfigError("trajectory inputs need channel stats");
  return stack_segments(apply_normalization(segments, *stats));
}

std::vector<Segment> from_model_space(const Matrix& rows, const std::vector<std::size_t>& shape,
                                      DataSource source, const std::optional<ChannelStats>& stats) {
  std::vector<Segment> out;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> v(rows.row(i).data(), rows.row(i).data() + rows.cols());
    if (source == DataSource::mnist) {
      for (double& x : v) x = std::clamp(0.5 * (x + 1.0), 0.0, 1.0);
    }
    Segment s;
    s.values = Tensor(shape, std::move(v));
    s.source = "generated-" + std::to_string(i);
    out.push_back(std::move(s));
  }
  if (source != DataSource::mnist) {
    if (!stats) throw ConfigError("trajectory outputs need channel stats");
    out = denormalize(out, *stats);
  }
  return out;
}

PreparedData prepare_data(const ExperimentSpec& spec) {
  PreparedData p;
  const auto segments = load_dataset(spec);
  p.split = make_holdout_split(segments, spec.holdout_class, spec.split_ratio, spec.split_seed());
  if (spec.source == DataSource::mnist) {
    p.train_x = (2.0 * training_matrix(p.split.train).array() - 1.0).matrix();
  } else {
    auto norm = normalize_segments(p.split.train);
    p.stats = norm.stats;
    p.train_x = training_matrix(norm.segments).cwiseMax(-5.0).cwiseMin(5.0);
  }
  p.test_x = model_inputs(p.split.test, spec.source, p.stats);
  p.data_shape = p.split.train.front().values.shape();
  return p;
}

IGMMResult fit_mixture(const ExperimentSpec& spec, const Matrix& train_z, const std::vector<int>& labels,
                       nlohmann::json* selection) {
  IGMMOptions opts = spec.igmm;
  opts.seed = spec.igmm_seed();
  if (spec.prior.mode == "tune") {
    IGMMOptions coarse = opts;
    coarse.sweeps = spec.prior.coarse_sweeps;
    coarse.burnin = spec.prior.coarse_burnin;
    coarse.thin = spec.prior.coarse_thin;
    auto tuned = tune_grid(train_z, labels, spec.prior.grid, coarse, opts, resolve_threads(spec.threads));
    if (selection) {
      *selection = {{"kappa0", tuned.best.kappa0}, {"dof", tuned.best.dof.text}, {"scale", tuned.best.scale}};
    }
    return tuned.refit;
  }
  const PriorTriple triple = spec.prior.mode == "explicit"
                                 ? PriorTriple{spec.prior.kappa0, DofRule::parse(spec.prior.dof), spec.prior.scale}
                                 : (spec.prior.preset == "image" ? image_prior_preset() : trajectory_prior_preset());
  return run_igmm(train_z, prior_from_triple(train_z, triple), opts);
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path persist_mixture(const std::filesystem::path& dir, const IGMMResult& igmm) {
  nlohmann::json ij = igmm;
  ij.erase("samples");
  ij.erase("cluster_counts");
  std::ofstream out(dir / "igmm.json", std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + (dir / "igmm.json").string());
  out << ij.dump(2) << '\n';
  return dir / "igmm.json";
}

std::vector<std::filesystem::path> persist_model(const std::filesystem::path& dir, const BiGANModel& bigan,
                                                 const std::optional<IGMMResult>& igmm,
                                                 const std::optional<ChannelStats>& stats, DataSource source) {
  std::filesystem::create_directories(dir);
  const auto weights = dir / "bigan.iggn";
  write_weights(weights, model_tensors(bigan));
  nlohmann::json meta{{"format", "igmmgan-model"},
                      {"version", kModelFormatVersion},
                      {"source", to_string(source)},
                      {"bigan", bigan.config},
                      {"steps_trained", bigan.steps_trained}};
  if (stats) meta["channel_stats"] = *stats;
  {
    std::ofstream out(dir / "model.json", std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + (dir / "model.json").string());
    out << meta.dump(2) << '\n';
  }
  std::vector<std::filesystem::path> files{weights, manifest_path(weights), dir / "model.json"};
  if (igmm) {
    files.push_back(persist_mixture(dir, *igmm));
  } else {
    std::filesystem::remove(dir / "igmm.json");
  }
  return files;
}

PersistedModel load_model(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "model.json");
  if (!meta_in) throw FormatError("missing " + (dir / "model.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model.json is not valid JSON: " + std::string(e.what()));
  }
  if (meta.value("format", std::string()) != "igmmgan-model") throw FormatError("model.json has the wrong format tag");
  const int version = meta.at("version").get<int>();
  if (version != kModelFormatVersion) {
    throw VersionError("model format version " + std::to_string(version) + " is not supported (reader is version " +
                       std::to_string(kModelFormatVersion) + ")");
  }
  const auto config = meta.at("bigan").get<BiGANConfig>();
  PersistedModel m{model_from_tensors(config, read_weights(dir / "bigan.iggn"),
                                      meta.at("steps_trained").get<std::size_t>()),
                   std::nullopt, std::nullopt, std::nullopt,
                   data_source_from_string(meta.value("source", std::string("synthetic")))};
  if (meta.contains("channel_stats")) m.stats = meta.at("channel_stats").get<ChannelStats>();
  std::ifstream igmm_in(dir / "igmm.json");
  if (igmm_in) {
    m.igmm = nlohmann::json::parse(igmm_in).get<IGMMResult>();
    m.mixture = MultimodalModel::from_igmm(*m.igmm);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Report

nlohmann::json MetricsReport::to_json() const {
  auto methods_json = nlohmann::json::array();
  for (const auto& m : methods) {
    methods_json.push_back({{"name", m.name},
                            {"auc", m.auc},
                            {"auc_holdout", m.auc_holdout},
                            {"mean_score_seconds", m.mean_score_seconds}});
  }
  auto manifest_json = nlohmann::json::array();
  for (const auto& e : manifest) {
    manifest_json.push_back({{"path", e.path}, {"sha256", e.sha256}, {"contains_timing", e.contains_timing}});
  }
  return nlohmann::json{{"methods", methods_json},
                        {"igmm", {{"components", igmm_components}, {"sizes", igmm_sizes}}},
                        {"type_medians", type_medians},
                        {"seeds", seeds},
                        {"config_hash", config_hash},
                        {"config", config},
                        {"loss_files", loss_files},
                        {"manifest", manifest_json}};
}

nlohmann::json strip_timing(const nlohmann::json& metrics) {
  nlohmann::json j = metrics;
  if (j.contains("methods")) {
    for (auto& m : j["methods"]) m.erase("mean_score_seconds");
  }
  if (j.contains("manifest")) {
    for (auto& e : j["manifest"]) {
      if (e.value("contains_timing", false)) e.erase("sha256");
    }
  }
  return j;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  return 0.5 * (*std::max_element(v.begin(), v.begin() + static_cast<long>(mid)) + upper);
}

template <typename Fn>
auto stage(const char* name, const ProgressFn& progress, Fn&& fn) {
  if (progress) progress(name);
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(std::string("stage '") + name + "' failed: " + e.what());
  }
}

}  // namespace

MetricsReport evaluate_comparison(const ExperimentSpec& input_spec, const ProgressFn& progress) {
  ExperimentSpec spec = input_spec;
  spec.validate();
  const auto& out = spec.output;
  std::filesystem::create_directories(out);

  MetricsReport report;
  report.config_hash = config_hash(spec);
  report.config = spec;
  report.config.erase("output");
  report.config.erase("threads");
  report.seeds = {{"master", spec.seed},
                  {"data", spec.data_seed()},
                  {"split", spec.split_seed()},
                  {"bigan", spec.bigan_seed()},
                  {"igmm", spec.igmm_seed()}};

  const PreparedData data = stage("prepare-data", progress, [&] { return prepare_data(spec); });
  const DatasetSplit& split = data.split;

  spec.bigan.data_shape = data.data_shape;
  spec.bigan.seed = spec.bigan_seed();
  BiGANModel bigan = stage("train-bigan", progress, [&] { return train_bigan(spec.bigan, data.train_x); });
  write_loss_history_csv(out / "loss.csv", bigan.history);
  report.loss_files = {"loss.csv"};

  const Matrix train_z = stage("encode", progress, [&] { return encode(bigan, data.train_x); });

  IGMMResult igmm = stage("fit-igmm", progress, [&] {
    std::vector<int> labels;
    for (const auto& s : split.train) labels.push_back(s.label);
    nlohmann::json selection;
    auto r = fit_mixture(spec, train_z, labels, &selection);
    if (!selection.is_null()) report.config["prior"]["selected"] = selection;
    return r;
  });
  report.igmm_components = igmm.components.size();
  for (const auto& c : igmm.components) report.igmm_sizes.push_back(c.size);

  const MultimodalModel mixture = stage("build-model", progress, [&] { return MultimodalModel::from_igmm(igmm); });
  const auto model_files = persist_model(out / "model", bigan, igmm, data.stats, spec.source);
  const Matrix& test_x = data.test_x;

  // Scoring.
  std::vector<std::vector<ScoreRecord>> all_records;
  stage("score", progress, [&] {
    ScoreRequest req;
    req.bigan = &bigan;
    req.mixture = &mixture;
    req.threads = 1;  // per-sample timings stay comparable
    req.method = ScoreMethod::igmm_mahalanobis;
    all_records.push_back(score_dataset(test_x, req));
    report.methods.push_back({"igmm-mahalanobis", 0, 0, 0, {}});
    for (double w : spec.egbad_weights) {
      req.method = ScoreMethod::egbad;
      req.egbad_weight = w;
      all_records.push_back(score_dataset(test_x, req));
      std::ostringstream name;
      name << "egbad(alpha_w=" << w << ")";
      report.methods.push_back({name.str(), 0, 0, 0, {}});
    }
    return 0;
  });

  report.test_labels = split.test_labels;
  for (const auto& s : split.test) {
    report.test_classes.push_back(s.label);
    report.test_anomalies.push_back(s.anomaly);
  }

  stage("metrics", progress, [&] {
    std::vector<std::size_t> holdout_idx;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      if (split.test[i].anomaly == AnomalyType::none) holdout_idx.push_back(i);
    }
    std::ofstream roc(out / "roc.csv", std::ios::trunc);
    roc << "method,fpr,tpr,threshold\n" << std::setprecision(17);
    report.type_medians = nlohmann::json::object();
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
      auto& method = report.methods[m];
      const auto& records = all_records[m];
      double total_time = 0.0;
      for (const auto& r : records) {
        method.scores.push_back(r.score);
        total_time += r.seconds;
      }
      method.mean_score_seconds = total_time / static_cast<double>(records.size());
      method.auc = roc_auc(method.scores, report.test_labels);
      std::vector<double> hs;
      std::vector<int> hl;
      for (auto i : holdout_idx) {
        hs.push_back(method.scores[i]);
        hl.push_back(report.test_labels[i]);
      }
      const bool both = std::count(hl.begin(), hl.end(), 1) > 0 && std::count(hl.begin(), hl.end(), 0) > 0;
      method.auc_holdout = both ? roc_auc(hs, hl) : method.auc;
      for (const auto& p : roc_curve(method.scores, report.test_labels)) {
        roc << method.name << ',' << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
      }
      std::map<std::string, std::vector<double>> groups;
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        const auto& s = split.test[i];
        std::string key;
        if (s.anomaly != AnomalyType::none) {
          key = to_string(s.anomaly);
        } else {
          key = s.label == spec.holdout_class ? "holdout" : "normal";
        }
        groups[key].push_back(method.scores[i]);
      }
      nlohmann::json med = nlohmann::json::object();
      for (const auto& [key, values] : groups) med[key] = median(values);
      report.type_medians[method.name] = med;
    }
    return 0;
  });

  {
    std::ofstream labels(out / "labels.csv", std::ios::trunc);
    labels << "id,label,class,anomaly,source\n";
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      labels << i << ',' << report.test_labels[i] << ',' << split.test[i].label << ','
             << to_string(split.test[i].anomaly) << ',' << split.test[i].source << '\n';
    }
  }
  bool first = true;
  for (const auto& records : all_records) {
    write_scores_csv(out / "scores.csv", records, !first);
    first = false;
  }

  auto add = [&](const std::filesystem::path& p, bool timing) {
    report.manifest.push_back(
        {std::filesystem::relative(p, out).generic_string(), sha256_file(p), timing});
  };
  add(out / "loss.csv", false);
  add(out / "roc.csv", false);
  add(out / "labels.csv", false);
  add(out / "scores.csv", true);
  for (const auto& f : model_files) add(f, false);

  std::ofstream(out / "metrics.json", std::ios::trunc) << report.to_json().dump(2) << '\n';
  return report;
}

}  // namespace igmmgan
