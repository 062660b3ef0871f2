#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"
#include "igmmgan/experiment.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace igmmgan;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict segments_to_python(const std::vector<Segment>& segments) {
  std::vector<int> labels;
  std::vector<std::string> anomalies, sources;
  for (const auto& s : segments) {
    labels.push_back(s.label);
    anomalies.emplace_back(to_string(s.anomaly));
    sources.push_back(s.source);
  }
  return py::dict("values"_a = stack_segments(segments), "shape"_a = segments.empty() ? std::vector<std::size_t>{}
                                                                                       : segments.front().values.shape(),
                  "labels"_a = labels, "anomalies"_a = anomalies, "sources"_a = sources);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "IGMM-GAN core: BiGAN training, IGMM fitting, Mahalanobis and EGBAD scoring.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ChecksumError>(m, "ChecksumError", PyExc_IOError);
  py::register_exception<VersionError>(m, "VersionError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("roc_auc", &roc_auc, "scores"_a, "labels"_a);
  m.def(
      "roc_curve",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : roc_curve(scores, labels)) out.emplace_back(p.fpr, p.tpr, p.threshold);
        return out;
      },
      "scores"_a, "labels"_a, "(fpr, tpr, threshold) triples.");
  m.def(
      "hungarian",
      [](const DenseMatrix& cost) {
        const auto a = hungarian(cost);
        return py::make_tuple(a.pairs, a.cost);
      },
      "cost"_a, "Minimum-cost assignment: (pairs, total cost).");
  m.def("macro_f1", &macro_f1, "predicted"_a, "truth"_a);
  m.def("align_samples", &align_samples, "samples"_a);

  m.def(
      "predictive_logpdf",
      [](const Vector& z, const Vector& mu0, double kappa0, const DenseMatrix& scale, double dof) {
        return predictive_logpdf(z, NIWPrior{mu0, kappa0, scale, dof});
      },
      "z"_a, "mu0"_a, "kappa0"_a, "scale"_a, "dof"_a);
  m.def(
      "niw_posterior",
      [](const Matrix& data, const Vector& mu0, double kappa0, const DenseMatrix& scale, double dof) {
        std::vector<std::size_t> rows(static_cast<std::size_t>(data.rows()));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        const auto post = niw_posterior(NIWPrior{mu0, kappa0, scale, dof}, ClusterStats::from_points(data, rows));
        return py::dict("mean"_a = post.mean, "kappa"_a = post.kappa, "scale"_a = post.scale, "dof"_a = post.dof);
      },
      "data"_a, "mu0"_a, "kappa0"_a, "scale"_a, "dof"_a);

  m.def(
      "run_igmm",
      [](const Matrix& data, double kappa0, const std::string& dof, double scale, double alpha, std::size_t sweeps,
         std::size_t burnin, std::size_t thin, std::size_t min_cluster_size, std::uint64_t seed) {
        IGMMOptions opts;
        opts.alpha = alpha;
        opts.sweeps = sweeps;
        opts.burnin = burnin;
        opts.thin = thin;
        opts.min_cluster_size = min_cluster_size;
        opts.seed = seed;
        py::gil_scoped_release release;
        const auto r = run_igmm(data, prior_from_triple(data, {kappa0, DofRule::parse(dof), scale}), opts);
        py::gil_scoped_acquire acquire;
        py::list comps;
        for (const auto& c : r.components) {
          comps.append(py::dict("label"_a = c.label, "mean"_a = c.mean, "covariance"_a = c.covariance, "size"_a = c.size));
        }
        return py::dict("consensus"_a = r.consensus, "components"_a = comps, "cluster_counts"_a = r.cluster_counts);
      },
      "data"_a, "kappa0"_a = 0.1, "dof"_a = "d+15", "scale"_a = 5.0, "alpha"_a = 1.0, "sweeps"_a = 500,
      "burnin"_a = 300, "thin"_a = 50, "min_cluster_size"_a = 50, "seed"_a = 0);

  m.def(
      "mahalanobis",
      [](const Vector& z, const Vector& mean, const DenseMatrix& cov) {
        return mahalanobis(z, GaussianComponent(mean, cov));
      },
      "z"_a, "mean"_a, "covariance"_a);

  m.def(
      "generate_synthetic_trips",
      [](const py::object& spec) { return segments_to_python(generate_synthetic_trips(from_python(spec).get<SyntheticSpec>())); },
      "spec"_a = py::dict(), "Synthetic trip segments from a SyntheticSpec dict (JSON keys).");
  m.def(
      "parse_geolife_plt",
      [](const std::string& text) {
        std::istringstream in(text);
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : parse_geolife_plt(in)) out.emplace_back(p.timestamp, p.lat, p.lon);
        return out;
      },
      "text"_a, "(timestamp, lat, lon) tuples.");
  m.def(
      "compute_velocities",
      [](const std::vector<std::tuple<double, double, double>>& pts) {
        std::vector<GpsPoint> points;
        for (const auto& [t, lat, lon] : pts) points.push_back({t, lat, lon});
        std::vector<std::pair<double, double>> out;
        for (const auto& v : compute_velocities(points)) out.emplace_back(v.vlat, v.vlon);
        return out;
      },
      "points"_a);

  m.def(
      "evaluate",
      [](const py::object& config) {
        const auto spec = from_python(config).get<ExperimentSpec>();
        MetricsReport report;
        {
          py::gil_scoped_release release;
          report = evaluate_comparison(spec);
        }
        return to_python(report.to_json());
      },
      "config"_a, "Runs the full comparison; returns the metrics.json content.");
  m.def(
      "score_model",
      [](const std::filesystem::path& model_dir, const Matrix& x, const std::string& method, double alpha_w) {
        const auto model = load_model(model_dir);
        ScoreRequest req;
        req.bigan = &model.bigan;
        req.egbad_weight = alpha_w;
        if (method == "egbad") {
          req.method = ScoreMethod::egbad;
        } else if (method == "igmm-mahalanobis") {
          if (!model.mixture) throw ConfigError("model has no mixture");
          req.mixture = &*model.mixture;
        } else {
          throw ConfigError("unknown method '" + method + "'");
        }
        std::vector<double> scores;
        for (const auto& r : score_dataset(x, req)) scores.push_back(r.score);
        return scores;
      },
      "model_dir"_a, "x"_a, "method"_a = "igmm-mahalanobis", "alpha_w"_a = 0.9,
      "Scores rows of model-space inputs with a persisted model.");
  m.def("strip_timing", [](const py::object& metrics) { return to_python(strip_timing(from_python(metrics))); });

  m.attr("__version__") = "0.1.0";
}
