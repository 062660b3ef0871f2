#include "igmmgan/bigan.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include <nlohmann/json.hpp>

#include "igmmgan/error.hpp"

namespace igmmgan {

// ---------------------------------------------------------------------------
// Architecture presets

Architecture Architecture::from_preset(const std::string& name) {
  using A = Activation;
  Architecture a;
  a.preset = name;
  if (name == "reference") {
    a.encoder = {{768, false, A::relu}, {32, true, A::relu}, {64, true, A::relu}, {128, true, A::relu}};
    a.generator = {{128, true, A::relu}, {64, true, A::relu}, {32, false, A::linear}};
    a.disc_x = {{64, false, A::leaky_relu}, {64, true, A::leaky_relu}};
    a.disc_z = {{512, false, A::leaky_relu}};
    a.disc_joint = {};
  } else if (name == "desk") {
    a.encoder = {{128, false, A::relu}, {64, true, A::relu}, {32, true, A::relu}};
    a.generator = {{64, true, A::relu}, {128, true, A::relu}};
    a.disc_x = {{64, false, A::leaky_relu}, {64, true, A::leaky_relu}};
    a.disc_z = {{64, false, A::leaky_relu}};
    a.disc_joint = {{64, false, A::leaky_relu}};
  } else {
    throw ConfigError("unknown architecture preset '" + name + "' (expected reference or desk)");
  }
  return a;
}

namespace {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky-relu" || s == "leaky_relu") return Activation::leaky_relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

nlohmann::json blocks_to_json(const std::vector<Block>& blocks) {
  auto arr = nlohmann::json::array();
  for (const auto& b : blocks) {
    arr.push_back({{"width", b.width}, {"batch_norm", b.batch_norm}, {"activation", to_string(b.activation)}});
  }
  return arr;
}

std::vector<Block> blocks_from_json(const nlohmann::json& arr) {
  std::vector<Block> out;
  for (const auto& j : arr) {
    Block b;
    b.width = j.at("width").get<std::size_t>();
    b.batch_norm = j.value("batch_norm", false);
    b.activation = activation_from_string(j.value("activation", std::string("linear")));
    out.push_back(b);
  }
  return out;
}

/// Dense layers directly followed by batch-norm carry no bias (BN removes it).
std::vector<LayerSpec> build_layers(std::size_t in, const std::vector<Block>& blocks, std::size_t out) {
  std::vector<LayerSpec> layers;
  std::size_t width = in;
  for (const Block& b : blocks) {
    layers.push_back(LayerSpec::dense(width, b.width, !b.batch_norm));
    if (b.batch_norm) layers.push_back(LayerSpec::batch_norm(b.width));
    if (b.activation != Activation::linear) layers.push_back(LayerSpec::act(b.width, b.activation));
    width = b.width;
  }
  if (out > 0) layers.push_back(LayerSpec::dense(width, out, true));
  return layers;
}

std::size_t blocks_out(std::size_t in, const std::vector<Block>& blocks) {
  return blocks.empty() ? in : blocks.back().width;
}

struct LayerPlan {
  std::vector<LayerSpec> encoder, generator, disc_x, disc_z, disc_joint;
};

LayerPlan plan_layers(const BiGANConfig& c) {
  const auto& a = c.architecture;
  const std::size_t data = c.data_dim();
  LayerPlan p;
  p.encoder = build_layers(data, a.encoder, c.latent_dim);
  p.generator = build_layers(c.latent_dim, a.generator, data);
  if (a.disc_x.empty() || a.disc_z.empty()) {
    throw ConfigError("discriminator branches need at least one block each");
  }
  p.disc_x = build_layers(data, a.disc_x, 0);
  p.disc_z = build_layers(c.latent_dim, a.disc_z, 0);
  p.disc_joint = build_layers(blocks_out(data, a.disc_x) + blocks_out(c.latent_dim, a.disc_z),
                              a.disc_joint, 1);
  return p;
}

}  // namespace

std::size_t BiGANConfig::data_dim() const { return shape_product(data_shape); }

void BiGANConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 (batch-norm needs two rows)");
  if (recon_weight < 0.0) throw ConfigError("reconstruction weight must be >= 0");
  if (adversarial_weight < 0.0) throw ConfigError("adversarial weight must be >= 0");
  if (data_shape.empty() || data_dim() == 0) throw ConfigError("data shape must be nonempty");
  Adam check(adam);  // validates betas/lr
  (void)check;
}

void to_json(nlohmann::json& j, const BiGANConfig& c) {
  j = nlohmann::json{
      {"latent_dim", c.latent_dim},
      {"data_shape", c.data_shape},
      {"architecture",
       {{"preset", c.architecture.preset},
        {"encoder", blocks_to_json(c.architecture.encoder)},
        {"generator", blocks_to_json(c.architecture.generator)},
        {"disc_x", blocks_to_json(c.architecture.disc_x)},
        {"disc_z", blocks_to_json(c.architecture.disc_z)},
        {"disc_joint", blocks_to_json(c.architecture.disc_joint)}}},
      {"batch_size", c.batch_size},
      {"steps", c.total_steps},
      {"lr", c.adam.lr},
      {"beta1", c.adam.beta1},
      {"beta2", c.adam.beta2},
      {"epsilon", c.adam.epsilon},
      {"recon_weight", c.recon_weight},
      {"adversarial_weight", c.adversarial_weight},
      {"zero_init_disc_output", c.zero_init_disc_output},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
  };
}

void from_json(const nlohmann::json& j, BiGANConfig& c) {
  c = BiGANConfig{};
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("data_shape")) c.data_shape = j.at("data_shape").get<std::vector<std::size_t>>();
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    c.architecture = Architecture::from_preset(a.value("preset", std::string("desk")));
    if (a.contains("encoder")) c.architecture.encoder = blocks_from_json(a.at("encoder"));
    if (a.contains("generator")) c.architecture.generator = blocks_from_json(a.at("generator"));
    if (a.contains("disc_x")) c.architecture.disc_x = blocks_from_json(a.at("disc_x"));
    if (a.contains("disc_z")) c.architecture.disc_z = blocks_from_json(a.at("disc_z"));
    if (a.contains("disc_joint")) c.architecture.disc_joint = blocks_from_json(a.at("disc_joint"));
  } else if (j.contains("preset")) {
    c.architecture = Architecture::from_preset(j.at("preset").get<std::string>());
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("steps", c.total_steps);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
  c.recon_weight = j.value("recon_weight", c.recon_weight);
  c.adversarial_weight = j.value("adversarial_weight", c.adversarial_weight);
  c.zero_init_disc_output = j.value("zero_init_disc_output", c.zero_init_disc_output);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("checkpoint_dir")) c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(Network x_branch, Network z_branch, Network joint)
    : x_branch_(std::move(x_branch)), z_branch_(std::move(z_branch)), joint_(std::move(joint)) {
  if (x_branch_.out_width() + z_branch_.out_width() != joint_.in_width()) {
    throw DimensionError("discriminator joint head width does not match branch outputs");
  }
  if (joint_.out_width() != 1) throw DimensionError("discriminator must end in one logit");
}

Discriminator::Trace Discriminator::forward(const Matrix& x, const Matrix& z, Mode mode) const {
  if (x.rows() != z.rows()) {
    throw DimensionError("discriminator pair batch sizes differ: " + std::to_string(x.rows()) +
                         " vs " + std::to_string(z.rows()));
  }
  Trace t;
  t.x_tape = x_branch_.forward(x, mode);
  t.z_tape = z_branch_.forward(z, mode);
  Matrix joined(x.rows(), t.x_tape.output.cols() + t.z_tape.output.cols());
  joined << t.x_tape.output, t.z_tape.output;
  t.joint_tape = joint_.forward(joined, mode);
  t.logits = t.joint_tape.output;
  t.probs = t.logits.unaryExpr([](double v) { return sigmoid(v); });
  return t;
}

std::pair<Matrix, Matrix> Discriminator::backward(const Trace& trace, const Matrix& logit_grad) {
  const Matrix g_joined = joint_.backward(trace.joint_tape, logit_grad);
  const Eigen::Index wx = trace.x_tape.output.cols();
  const Matrix gx_branch = g_joined.leftCols(wx);
  const Matrix gz_branch = g_joined.rightCols(g_joined.cols() - wx);
  Matrix gx = x_branch_.backward(trace.x_tape, gx_branch);
  Matrix gz = z_branch_.backward(trace.z_tape, gz_branch);
  return {std::move(gx), std::move(gz)};
}

void Discriminator::update_running_stats(const Trace& trace) {
  x_branch_.update_running_stats(trace.x_tape);
  z_branch_.update_running_stats(trace.z_tape);
  joint_.update_running_stats(trace.joint_tape);
}

void Discriminator::zero_grad() {
  x_branch_.zero_grad();
  z_branch_.zero_grad();
  joint_.zero_grad();
}

std::vector<ParamSet*> Discriminator::param_groups() {
  return {&x_branch_.params(), &z_branch_.params(), &joint_.params()};
}

// ---------------------------------------------------------------------------
// Model

BiGANModel BiGANModel::create(const BiGANConfig& config) {
  config.validate();
  const LayerPlan plan = plan_layers(config);
  Rng rng(config.seed);
  BiGANModel m;
  m.config = config;
  m.encoder = Network("encoder", plan.encoder, rng);
  m.generator = Network("generator", plan.generator, rng);
  Network joint("disc_joint", plan.disc_joint, rng);
  if (config.zero_init_disc_output) joint.zero_last_dense();
  m.discriminator = Discriminator(Network("disc_x", plan.disc_x, rng),
                                  Network("disc_z", plan.disc_z, rng), std::move(joint));
  m.disc_optimizer = Adam(config.adam);
  m.ge_optimizer = Adam(config.adam);
  return m;
}

Tensor sample_latent(std::size_t count, std::size_t d, Rng& rng) {
  if (count < 1 || d < 1) throw DimensionError("sample_latent needs count, d >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(count * d);
  for (double& v : values) v = normal(rng);
  return Tensor({count, d}, std::move(values));
}

namespace {

Matrix sample_latent_matrix(std::size_t count, std::size_t d, Rng& rng) {
  return sample_latent(count, d, rng).to_matrix();
}

void check_width(const Matrix& m, std::size_t width, const char* what) {
  if (static_cast<std::size_t>(m.cols()) != width) {
    throw DimensionError(std::string(what) + " expects rows of width " + std::to_string(width) +
                         ", got " + std::to_string(m.cols()));
  }
}

std::vector<std::size_t> batched_shape(std::size_t batch, const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s{batch};
  s.insert(s.end(), shape.begin(), shape.end());
  return s;
}

}  // namespace

Matrix encode(const BiGANModel& model, const Matrix& x) {
  check_width(x, model.config.data_dim(), "encode");
  return model.encoder.predict(x);
}

Matrix generate(const BiGANModel& model, const Matrix& z) {
  check_width(z, model.config.latent_dim, "generate");
  return model.generator.predict(z);
}

Tensor encode(const BiGANModel& model, const Tensor& x) {
  return Tensor::from_matrix(encode(model, x.to_matrix()));
}

Tensor generate(const BiGANModel& model, const Tensor& z) {
  const Matrix out = generate(model, z.to_matrix());
  return Tensor(batched_shape(static_cast<std::size_t>(out.rows()), model.config.data_shape),
                std::vector<double>(out.data(), out.data() + out.size()));
}

std::vector<double> discriminate(const BiGANModel& model, const Tensor& x, const Tensor& z) {
  const Matrix xm = x.to_matrix();
  const Matrix zm = z.to_matrix();
  check_width(xm, model.config.data_dim(), "discriminate (x)");
  check_width(zm, model.config.latent_dim, "discriminate (z)");
  const auto trace = model.discriminator.forward(xm, zm, Mode::eval);
  return {trace.probs.data(), trace.probs.data() + trace.probs.size()};
}

double reconstruction_loss(const BiGANModel& model, const Matrix& x) {
  const Matrix recon = generate(model, encode(model, x));
  return (x - recon).rowwise().norm().mean();
}

namespace {

/// Mean BCE of a column of probabilities against a fixed target.
double mean_bce(const Matrix& probs, int target) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) s += binary_cross_entropy(probs.data()[i], target);
  return s / static_cast<double>(probs.size());
}

/// Gradient of weight * mean BCE(sigmoid(logit), target) w.r.t. the logits.
Matrix bce_logit_grad(const Matrix& probs, int target, double weight) {
  const double scale = weight / static_cast<double>(probs.rows());
  return ((probs.array() - static_cast<double>(target)) * scale).matrix();
}

}  // namespace

StepLosses train_step(BiGANModel& model, const Matrix& real_batch, Rng& rng) {
  const auto& cfg = model.config;
  check_width(real_batch, cfg.data_dim(), "train_step");
  if (real_batch.rows() < 2) throw DimensionError("train_step needs a batch of >= 2 rows");
  const Eigen::Index batch = real_batch.rows();
  const Matrix z = sample_latent_matrix(static_cast<std::size_t>(batch), cfg.latent_dim, rng);
  Discriminator& disc = model.discriminator;
  StepLosses losses;

  // Real pairs (x, E(x)) fill the top half of one discriminator batch and
  // fake pairs (G(z), z) the bottom half, so batch statistics match eval mode.
  auto pairs = [&](const Matrix& ex, const Matrix& gz) {
    Matrix xs(2 * batch, real_batch.cols()), zs(2 * batch, z.cols());
    xs << real_batch, gz;
    zs << ex, z;
    return std::pair{xs, zs};
  };

  // Discriminator update. Encoder/generator outputs enter as constants.
  {
    const Tape e_tape = model.encoder.forward(real_batch, Mode::train);
    const Tape g_tape = model.generator.forward(z, Mode::train);
    const auto [xs, zs] = pairs(e_tape.output, g_tape.output);
    const auto trace = disc.forward(xs, zs, Mode::train);
    const Matrix real_p = trace.probs.topRows(batch), fake_p = trace.probs.bottomRows(batch);
    losses.d_loss = 0.5 * (mean_bce(real_p, 1) + mean_bce(fake_p, 0));
    Matrix grad(2 * batch, 1);
    grad << bce_logit_grad(real_p, 1, 0.5), bce_logit_grad(fake_p, 0, 0.5);
    disc.zero_grad();
    disc.backward(trace, grad);
    model.disc_optimizer.step(disc.param_groups());
    disc.update_running_stats(trace);
  }

  // Generator + encoder update: non-saturating adversarial term plus
  // reconstruction. The discriminator's own gradients are discarded.
  {
    model.encoder.zero_grad();
    model.generator.zero_grad();
    const Tape e_tape = model.encoder.forward(real_batch, Mode::train);
    const Tape g_tape = model.generator.forward(z, Mode::train);
    const auto [xs, zs] = pairs(e_tape.output, g_tape.output);
    const auto trace = disc.forward(xs, zs, Mode::train);
    const Matrix real_p = trace.probs.topRows(batch), fake_p = trace.probs.bottomRows(batch);
    const double adversarial = 0.5 * (mean_bce(fake_p, 1) + mean_bce(real_p, 0));

    const double w_adv = cfg.adversarial_weight;
    Matrix grad(2 * batch, 1);
    grad << bce_logit_grad(real_p, 0, 0.5 * w_adv), bce_logit_grad(fake_p, 1, 0.5 * w_adv);
    const auto [gx, gz] = disc.backward(trace, grad);

    Matrix encoder_grad = gz.topRows(batch);
    model.generator.backward(g_tape, gx.bottomRows(batch));

    const Tape r_tape = model.generator.forward(e_tape.output, Mode::train);
    const Matrix residual = real_batch - r_tape.output;
    const Eigen::VectorXd norms = residual.rowwise().norm();
    losses.recon_loss = norms.mean();
    if (cfg.recon_weight > 0.0) {
      Matrix r_grad(residual.rows(), residual.cols());
      const double scale = cfg.recon_weight / static_cast<double>(batch);
      for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        r_grad.row(i) = norms(i) > 0.0 ? Matrix(-scale * residual.row(i) / norms(i))
                                       : Matrix::Zero(1, residual.cols());
      }
      encoder_grad += model.generator.backward(r_tape, r_grad);
    }
    model.encoder.backward(e_tape, encoder_grad);
    losses.ge_loss = w_adv * adversarial + cfg.recon_weight * losses.recon_loss;

    model.ge_optimizer.step({&model.encoder.params(), &model.generator.params()});
    model.encoder.update_running_stats(e_tape);
    if (w_adv > 0.0) model.generator.update_running_stats(g_tape);
    model.generator.update_running_stats(r_tape);
  }

  if (!std::isfinite(losses.d_loss) || !std::isfinite(losses.ge_loss) ||
      !std::isfinite(losses.recon_loss)) {
    throw NumericError("non-finite loss");
  }
  return losses;
}

namespace {

void check_dataset(const BiGANConfig& config, const Matrix& dataset) {
  if (dataset.rows() == 0) throw ConfigError("training dataset is empty");
  check_width(dataset, config.data_dim(), "train_bigan");
  if (!dataset.allFinite()) throw NumericError("training dataset contains non-finite values");
  const double extreme = dataset.cwiseAbs().maxCoeff();
  if (extreme > 5.0) {
    throw ConfigError("training data must be normalized to [-5, 5]; found |value| = " +
                      std::to_string(extreme));
  }
}

void write_checkpoint(const BiGANModel& model) {
  const auto& cfg = model.config;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  const std::string stem = "checkpoint_" + std::to_string(model.steps_trained);
  write_weights(cfg.checkpoint_dir / (stem + ".iggn"), model_tensors(model));
  nlohmann::json snapshot = cfg;
  snapshot["steps_trained"] = model.steps_trained;
  std::ofstream out(cfg.checkpoint_dir / (stem + ".config.json"));
  out << snapshot.dump(2) << '\n';
}

}  // namespace

void continue_training(BiGANModel& model, const Matrix& dataset, std::size_t steps, Rng& rng) {
  check_dataset(model.config, dataset);
  const auto n = static_cast<std::size_t>(dataset.rows());
  const std::size_t batch = model.config.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Matrix real(static_cast<Eigen::Index>(batch), dataset.cols());
  for (std::size_t s = 0; s < steps; ++s) {
    if (n >= batch) {
      // Partial Fisher-Yates: first `batch` entries become a uniform draw without replacement.
      for (std::size_t i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
        real.row(static_cast<Eigen::Index>(i)) = dataset.row(static_cast<Eigen::Index>(order[i]));
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < batch; ++i) {
        real.row(static_cast<Eigen::Index>(i)) = dataset.row(static_cast<Eigen::Index>(pick(rng)));
      }
    }
    try {
      model.history.push_back(train_step(model, real, rng));
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(model.steps_trained) + ": " +
                         e.what());
    }
    ++model.steps_trained;
    if (model.config.checkpoint_every > 0 && !model.config.checkpoint_dir.empty() &&
        model.steps_trained % model.config.checkpoint_every == 0) {
      write_checkpoint(model);
    }
  }
}

BiGANModel train_bigan(const BiGANConfig& config, const Matrix& dataset) {
  config.validate();
  check_dataset(config, dataset);
  BiGANModel model = BiGANModel::create(config);
  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  model.history.reserve(config.total_steps);
  continue_training(model, dataset, config.total_steps, rng);
  return model;
}

std::vector<NamedTensor> model_tensors(const BiGANModel& model) {
  std::vector<NamedTensor> out;
  for (const ParamSet* ps :
       {&model.encoder.params(), &model.generator.params(), &model.discriminator.x_branch().params(),
        &model.discriminator.z_branch().params(), &model.discriminator.joint().params()}) {
    auto part = to_named_tensors(*ps);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

BiGANModel model_from_tensors(const BiGANConfig& config, const std::vector<NamedTensor>& tensors,
                              std::size_t steps_trained) {
  config.validate();
  const LayerPlan plan = plan_layers(config);
  BiGANModel m;
  m.config = config;
  m.encoder = Network("encoder", plan.encoder, params_from_named(tensors, "encoder."));
  m.generator = Network("generator", plan.generator, params_from_named(tensors, "generator."));
  m.discriminator =
      Discriminator(Network("disc_x", plan.disc_x, params_from_named(tensors, "disc_x.")),
                    Network("disc_z", plan.disc_z, params_from_named(tensors, "disc_z.")),
                    Network("disc_joint", plan.disc_joint, params_from_named(tensors, "disc_joint.")));
  m.disc_optimizer = Adam(config.adam);
  m.ge_optimizer = Adam(config.adam);
  m.steps_trained = steps_trained;
  return m;
}

void write_loss_history_csv(const std::filesystem::path& path, const std::vector<StepLosses>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "step,d_loss,ge_loss,recon_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << i << ',' << history[i].d_loss << ',' << history[i].ge_loss << ','
        << history[i].recon_loss << '\n';
  }
}

}  // namespace igmmgan
