#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"
#include "igmmgan/experiment.hpp"

namespace fs = std::filesystem;
using namespace igmmgan;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config,-c", c.config, "JSON experiment file")->required();
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out,-o", c.out, "Output directory (overrides the config)");
  cmd->add_option("--threads", c.threads, "Worker threads (capped by IGMMGAN_THREADS)");
}

ExperimentSpec load_spec(const Common& c) {
  ExperimentSpec spec;
  try {
    spec = load_experiment(c.config);
    if (c.seed) spec.seed = *c.seed;
    if (c.out) spec.output = *c.out;
    if (c.threads) spec.threads = *c.threads;
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return spec;
}

fs::path model_dir(const ExperimentSpec& spec, const std::string& flag) {
  return flag.empty() ? spec.output / "model" : fs::path(flag);
}

void print_auc(const char* name, const std::vector<double>& scores, const std::vector<int>& labels) {
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) std::cout << name << " AUC " << std::setprecision(6) << roc_auc(scores, labels) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IGMM-GAN: BiGAN latent-space mixture models for anomaly detection"};
  app.require_subcommand(1);

  Common gen_c, train_c, enc_c, fit_c, score_c, eval_c, grid_c, sample_c;
  std::string enc_model, enc_split = "all", fit_model, score_model, score_method = "igmm-mahalanobis", grid_model,
              sample_model;
  double score_alpha = 0.9;
  std::optional<std::size_t> train_steps;
  std::size_t sample_count = 16;

  auto* gen = app.add_subcommand("gen-data", "Generate or ingest segments into a segment archive");
  add_common(gen, gen_c);
  auto* train = app.add_subcommand("train", "Train the BiGAN on the training split");
  add_common(train, train_c);
  train->add_option("--steps", train_steps, "Training steps (overrides the config)");
  auto* enc = app.add_subcommand("encode", "Export latent codes as CSV");
  add_common(enc, enc_c);
  enc->add_option("--model", enc_model, "Model directory (default <out>/model)");
  enc->add_option("--split", enc_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  auto* fit = app.add_subcommand("fit-igmm", "Fit the IGMM on encoded training data");
  add_common(fit, fit_c);
  fit->add_option("--model", fit_model, "Model directory (default <out>/model)");
  auto* score = app.add_subcommand("score", "Score the test split");
  add_common(score, score_c);
  score->add_option("--model", score_model, "Model directory (default <out>/model)");
  score->add_option("--method", score_method, "igmm-mahalanobis or egbad")
      ->check(CLI::IsMember({"igmm-mahalanobis", "egbad"}));
  score->add_option("--alpha-w", score_alpha, "EGBAD weight")->check(CLI::Range(0.0, 1.0));
  auto* eval = app.add_subcommand("evaluate", "Run the full IGMM-GAN vs EGBAD comparison");
  add_common(eval, eval_c);
  auto* grid = app.add_subcommand("grid-search", "Grid-search the NIW prior on encoded training data");
  add_common(grid, grid_c);
  grid->add_option("--model", grid_model, "Model directory (default <out>/model)");
  auto* sample = app.add_subcommand("generate-samples", "Decode latent draws into segments");
  add_common(sample, sample_c);
  sample->add_option("--model", sample_model, "Model directory (default <out>/model)");
  sample->add_option("--count", sample_count, "Number of samples")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      const auto spec = load_spec(gen_c);
      const auto segments = load_dataset(spec);
      fs::create_directories(spec.output);
      write_segment_archive(spec.output / "segments.iggn", segments);
      std::cout << "wrote " << segments.size() << " segments to " << (spec.output / "segments.iggn").string() << '\n';
    } else if (train->parsed()) {
      auto spec = load_spec(train_c);
      if (train_steps) spec.bigan.total_steps = *train_steps;
      const auto data = prepare_data(spec);
      spec.bigan.data_shape = data.data_shape;
      spec.bigan.seed = spec.bigan_seed();
      const auto model = train_bigan(spec.bigan, data.train_x);
      fs::create_directories(spec.output);
      write_loss_history_csv(spec.output / "loss.csv", model.history);
      persist_model(spec.output / "model", model, std::nullopt, data.stats, spec.source);
      std::cout << "trained " << model.steps_trained << " steps; final reconstruction loss "
                << model.history.back().recon_loss << '\n';
    } else if (enc->parsed()) {
      const auto spec = load_spec(enc_c);
      const auto model = load_model(model_dir(spec, enc_model));
      const auto data = prepare_data(spec);
      fs::create_directories(spec.output);
      std::ofstream out(spec.output / "latent.csv");
      out << "id,split,label,anomaly";
      for (std::size_t k = 0; k < model.bigan.config.latent_dim; ++k) out << ",z" << k;
      out << '\n' << std::setprecision(17);
      std::size_t id = 0;
      auto dump = [&](const char* name, const Matrix& x, const std::vector<Segment>& segs) {
        const Matrix z = encode(model.bigan, x);
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          const auto& s = segs[static_cast<std::size_t>(i)];
          out << id++ << ',' << name << ',' << s.label << ',' << to_string(s.anomaly);
          for (Eigen::Index k = 0; k < z.cols(); ++k) out << ',' << z(i, k);
          out << '\n';
        }
      };
      if (enc_split != "test") dump("train", data.train_x, data.split.train);
      if (enc_split != "train") dump("test", data.test_x, data.split.test);
      std::cout << "wrote " << id << " latent codes to " << (spec.output / "latent.csv").string() << '\n';
    } else if (fit->parsed()) {
      const auto spec = load_spec(fit_c);
      const fs::path dir = model_dir(spec, fit_model);
      const auto model = load_model(dir);
      const auto data = prepare_data(spec);
      std::vector<int> labels;
      for (const auto& s : data.split.train) labels.push_back(s.label);
      nlohmann::json selection;
      const auto result = fit_mixture(spec, encode(model.bigan, data.train_x), labels, &selection);
      persist_mixture(dir, result);
      std::cout << result.components.size() << " components, sizes";
      for (const auto& c : result.components) std::cout << ' ' << c.size;
      std::cout << '\n';
      if (!selection.is_null()) std::cout << "selected prior " << selection.dump() << '\n';
    } else if (score->parsed()) {
      const auto spec = load_spec(score_c);
      const auto model = load_model(model_dir(spec, score_model));
      const auto data = prepare_data(spec);
      ScoreRequest req;
      req.bigan = &model.bigan;
      req.method = score_method == "egbad" ? ScoreMethod::egbad : ScoreMethod::igmm_mahalanobis;
      req.egbad_weight = score_alpha;
      if (req.method == ScoreMethod::igmm_mahalanobis) {
        if (!model.mixture) throw ConfigError("model has no igmm.json; run fit-igmm first");
        req.mixture = &*model.mixture;
      }
      const auto records = score_dataset(data.test_x, req);
      fs::create_directories(spec.output);
      write_scores_csv(spec.output / "scores.csv", records);
      std::vector<double> scores;
      for (const auto& r : records) scores.push_back(r.score);
      print_auc(to_string(req.method), scores, data.split.test_labels);
    } else if (eval->parsed()) {
      const auto spec = load_spec(eval_c);
      const auto report = evaluate_comparison(spec, [](const std::string& stage) {
        std::cerr << "[stage] " << stage << '\n';
      });
      for (const auto& m : report.methods) {
        std::cout << std::left << std::setw(22) << m.name << " AUC " << std::setprecision(6) << m.auc
                  << "  held-out AUC " << m.auc_holdout << "  mean score time " << m.mean_score_seconds << " s\n";
      }
      std::cout << "IGMM components: " << report.igmm_components << '\n';
    } else if (grid->parsed()) {
      const auto spec = load_spec(grid_c);
      const auto model = load_model(model_dir(spec, grid_model));
      const auto data = prepare_data(spec);
      std::vector<int> labels;
      for (const auto& s : data.split.train) labels.push_back(s.label);
      IGMMOptions full = spec.igmm;
      full.seed = spec.igmm_seed();
      IGMMOptions coarse = full;
      coarse.sweeps = spec.prior.coarse_sweeps;
      coarse.burnin = spec.prior.coarse_burnin;
      coarse.thin = spec.prior.coarse_thin;
      const auto result = tune_grid(encode(model.bigan, data.train_x), labels, spec.prior.grid, coarse, full,
                                    resolve_threads(spec.threads));
      nlohmann::json cells = nlohmann::json::array();
      for (const auto& c : result.cells) {
        cells.push_back({{"kappa0", c.kappa0},
                         {"dof", c.dof.text},
                         {"dof_value", c.dof_value},
                         {"scale", c.scale},
                         {"f1", c.f1 ? nlohmann::json(*c.f1) : nlohmann::json(nullptr)},
                         {"error", c.error}});
      }
      nlohmann::json out{{"best", {{"kappa0", result.best.kappa0}, {"dof", result.best.dof.text},
                                   {"scale", result.best.scale}, {"f1", result.best.f1.value_or(0.0)}}},
                         {"refit_components", result.refit.components.size()},
                         {"cells", cells}};
      fs::create_directories(spec.output);
      std::ofstream(spec.output / "grid.json") << out.dump(2) << '\n';
      std::cout << "best prior " << out["best"].dump() << '\n';
    } else if (sample->parsed()) {
      const auto spec = load_spec(sample_c);
      const auto model = load_model(model_dir(spec, sample_model));
      Rng rng(spec.seed);
      const Tensor z = sample_latent(sample_count, model.bigan.config.latent_dim, rng);
      const Matrix x = generate(model.bigan, z.to_matrix());
      const auto segments = from_model_space(x, model.bigan.config.data_shape, model.source, model.stats);
      fs::create_directories(spec.output);
      write_segment_archive(spec.output / "samples.iggn", segments);
      std::ofstream csv(spec.output / "samples.csv");
      csv << std::setprecision(17);
      for (std::size_t i = 0; i < segments.size(); ++i) {
        csv << i;
        for (double v : segments[i].values.data()) csv << ',' << v;
        csv << '\n';
      }
      std::cout << "wrote " << segments.size() << " samples to " << (spec.output / "samples.iggn").string() << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
