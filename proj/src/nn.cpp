#include "igmmgan/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "igmmgan/error.hpp"

namespace igmmgan {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.fan_in = in;
  s.fan_out = out;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::batch_norm(std::size_t features) {
  LayerSpec s;
  s.kind = LayerKind::batch_norm;
  s.fan_in = s.fan_out = features;
  return s;
}

LayerSpec LayerSpec::act(std::size_t features, Activation a, double slope) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.fan_in = s.fan_out = features;
  s.activation = a;
  s.slope = slope;
  return s;
}

void LayerSpec::validate() const {
  if (fan_in < 1 || fan_out < 1) throw ConfigError("layer fan-in and fan-out must be >= 1");
  if (kind != LayerKind::dense && fan_in != fan_out) {
    throw ConfigError(std::string(to_string(kind)) + " layer cannot change width");
  }
  if (kind == LayerKind::activation && activation == Activation::leaky_relu &&
      !(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky-ReLU slope must lie in (0,1)");
  }
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::batch_norm: return "batch-norm";
    case LayerKind::activation: return "activation";
  }
  return "?";
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky-relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::add(std::string name, Matrix value, bool trainable) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
  }
  Param p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

const Param& ParamSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

Param& ParamSet::find(const std::string& name) {
  return const_cast<Param&>(static_cast<const ParamSet&>(*this).find(name));
}

void ParamSet::zero_grad() {
  for (auto& p : params_) {
    p.grad.setZero();
    p.has_grad = false;
  }
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(std::string name, std::vector<LayerSpec> layers, Rng& rng)
    : name_(std::move(name)), layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("network '" + name_ + "' has no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    spec.validate();
    if (i > 0 && layers_[i - 1].fan_out != spec.fan_in) {
      throw ConfigError("network '" + name_ + "': layer " + std::to_string(i) + " expects width " +
                        std::to_string(spec.fan_in) + " but receives " +
                        std::to_string(layers_[i - 1].fan_out));
    }
    const std::string prefix = name_ + "." + std::to_string(i) + ".";
    const auto in = static_cast<Eigen::Index>(spec.fan_in);
    const auto out = static_cast<Eigen::Index>(spec.fan_out);
    switch (spec.kind) {
      case LayerKind::dense: {
        const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
        std::uniform_real_distribution<double> init(-limit, limit);
        Matrix w(in, out);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = init(rng);
        params_.add(prefix + "weight", std::move(w));
        if (spec.bias) params_.add(prefix + "bias", Matrix::Zero(1, out));
        break;
      }
      case LayerKind::batch_norm:
        params_.add(prefix + "scale", Matrix::Ones(1, out));
        params_.add(prefix + "shift", Matrix::Zero(1, out));
        params_.add(prefix + "running_mean", Matrix::Zero(1, out), false);
        params_.add(prefix + "running_var", Matrix::Ones(1, out), false);
        break;
      case LayerKind::activation:
        break;
    }
  }
  build_slots();
}

Network::Network(std::string name, std::vector<LayerSpec> layers, ParamSet params)
    : name_(std::move(name)), layers_(std::move(layers)), params_(std::move(params)) {
  if (layers_.empty()) throw ConfigError("network '" + name_ + "' has no layers");
  for (const auto& spec : layers_) spec.validate();
  build_slots();
}

void Network::build_slots() {
  slots_.assign(layers_.size(), Slots{});
  auto expect = [&](const std::string& pname, Eigen::Index rows, Eigen::Index cols) {
    const Param& p = params_.find(pname);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw DimensionError("parameter '" + pname + "' has shape " + std::to_string(p.value.rows()) +
                           "x" + std::to_string(p.value.cols()) + ", expected " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (params_[k].name == pname) return k;
    }
    return std::size_t{0};
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    const std::string prefix = name_ + "." + std::to_string(i) + ".";
    const auto in = static_cast<Eigen::Index>(spec.fan_in);
    const auto out = static_cast<Eigen::Index>(spec.fan_out);
    Slots& s = slots_[i];
    if (spec.kind == LayerKind::dense) {
      s.weight = expect(prefix + "weight", in, out);
      s.has_bias = spec.bias;
      if (spec.bias) s.bias = expect(prefix + "bias", 1, out);
    } else if (spec.kind == LayerKind::batch_norm) {
      s.scale = expect(prefix + "scale", 1, out);
      s.shift = expect(prefix + "shift", 1, out);
      s.running_mean = expect(prefix + "running_mean", 1, out);
      s.running_var = expect(prefix + "running_var", 1, out);
    }
  }
}

std::size_t Network::in_width() const { return layers_.front().fan_in; }
std::size_t Network::out_width() const { return layers_.back().fan_out; }

std::string Network::layer_label(std::size_t i) const {
  const LayerSpec& spec = layers_[i];
  std::string label = name_ + " layer " + std::to_string(i) + " (" + to_string(spec.kind);
  if (spec.kind == LayerKind::activation) label += std::string(" ") + to_string(spec.activation);
  return label + ")";
}

namespace {

double activate(Activation a, double slope, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? x : slope * x;
    case Activation::sigmoid: return sigmoid(x);
    case Activation::linear: return x;
  }
  return x;
}

double activate_grad(Activation a, double slope, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? 1.0 : slope;
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::linear: return 1.0;
  }
  return 1.0;
}

}  // namespace

Tape Network::forward(const Matrix& input, Mode mode) const {
  if (static_cast<std::size_t>(input.cols()) != in_width()) {
    throw DimensionError("network '" + name_ + "' expects input width " +
                         std::to_string(in_width()) + ", got " + std::to_string(input.cols()));
  }
  if (input.rows() < 1) throw DimensionError("network '" + name_ + "' needs a batch of >= 1 rows");

  Tape tape;
  tape.mode = mode;
  tape.layers.resize(layers_.size());
  Matrix x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    const Slots& s = slots_[i];
    LayerTrace& trace = tape.layers[i];
    trace.input = x;
    switch (spec.kind) {
      case LayerKind::dense: {
        Matrix y = x * params_[s.weight].value;
        if (s.has_bias) y.rowwise() += RowVector(params_[s.bias].value.row(0));
        x = std::move(y);
        break;
      }
      case LayerKind::batch_norm: {
        if (mode == Mode::train) {
          const double n = static_cast<double>(x.rows());
          trace.mean = x.colwise().mean();
          const Matrix centered = x.rowwise() - trace.mean;
          trace.var = centered.array().square().colwise().sum().matrix() / n;
        } else {
          trace.mean = params_[s.running_mean].value.row(0);
          trace.var = params_[s.running_var].value.row(0);
        }
        trace.inv_std = (trace.var.array() + kBatchNormEpsilon).rsqrt().matrix();
        trace.normalized =
            ((x.rowwise() - trace.mean).array().rowwise() * trace.inv_std.array()).matrix();
        const RowVector scale = params_[s.scale].value.row(0);
        const RowVector shift = params_[s.shift].value.row(0);
        x = (trace.normalized.array().rowwise() * scale.array()).matrix();
        x.rowwise() += shift;
        break;
      }
      case LayerKind::activation:
        x = x.unaryExpr([&](double v) { return activate(spec.activation, spec.slope, v); });
        break;
    }
    if (!x.allFinite()) throw NumericError("non-finite output in " + layer_label(i));
  }
  tape.output = std::move(x);
  return tape;
}

Matrix Network::backward(const Tape& tape, const Matrix& output_grad) {
  if (tape.layers.size() != layers_.size()) {
    throw DimensionError("tape of " + std::to_string(tape.layers.size()) +
                         " layers does not belong to network '" + name_ + "'");
  }
  if (output_grad.rows() != tape.output.rows() || output_grad.cols() != tape.output.cols()) {
    throw DimensionError("output gradient shape does not match tape output in network '" + name_ +
                         "'");
  }
  Matrix g = output_grad;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const LayerSpec& spec = layers_[idx];
    const Slots& s = slots_[idx];
    const LayerTrace& trace = tape.layers[idx];
    switch (spec.kind) {
      case LayerKind::dense: {
        Param& w = params_[s.weight];
        w.grad.noalias() += trace.input.transpose() * g;
        w.has_grad = true;
        if (s.has_bias) {
          Param& b = params_[s.bias];
          b.grad += g.colwise().sum();
          b.has_grad = true;
        }
        g = g * w.value.transpose();
        break;
      }
      case LayerKind::batch_norm: {
        Param& scale = params_[s.scale];
        Param& shift = params_[s.shift];
        scale.grad += (g.array() * trace.normalized.array()).colwise().sum().matrix();
        shift.grad += g.colwise().sum();
        scale.has_grad = shift.has_grad = true;
        params_[s.running_mean].has_grad = params_[s.running_var].has_grad = true;
        const Matrix gx_hat = (g.array().rowwise() * scale.value.row(0).array()).matrix();
        if (tape.mode == Mode::train) {
          const double n = static_cast<double>(g.rows());
          const RowVector sum_g = gx_hat.colwise().sum();
          const RowVector sum_gx = (gx_hat.array() * trace.normalized.array()).colwise().sum();
          Matrix dx = n * gx_hat;
          dx.rowwise() -= sum_g;
          dx -= (trace.normalized.array().rowwise() * sum_gx.array()).matrix();
          g = (dx.array().rowwise() * (trace.inv_std.array() / n)).matrix();
        } else {
          g = (gx_hat.array().rowwise() * trace.inv_std.array()).matrix();
        }
        break;
      }
      case LayerKind::activation: {
        const Matrix local = trace.input.unaryExpr(
            [&](double v) { return activate_grad(spec.activation, spec.slope, v); });
        g = (g.array() * local.array()).matrix();
        break;
      }
    }
  }
  return g;
}

void Network::update_running_stats(const Tape& tape) {
  if (tape.mode != Mode::train) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind != LayerKind::batch_norm) continue;
    const Slots& s = slots_[i];
    Matrix& rm = params_[s.running_mean].value;
    Matrix& rv = params_[s.running_var].value;
    rm = kRunningMomentum * rm + (1.0 - kRunningMomentum) * Matrix(tape.layers[i].mean);
    rv = kRunningMomentum * rv + (1.0 - kRunningMomentum) * Matrix(tape.layers[i].var);
  }
}

void Network::zero_last_dense() {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i].kind != LayerKind::dense) continue;
    params_[slots_[i].weight].value.setZero();
    if (slots_[i].has_bias) params_[slots_[i].bias].value.setZero();
    return;
  }
}

ForwardResult forward_pass(const Network& net, const Tensor& input, Mode mode) {
  Tape tape = net.forward(input.to_matrix(), mode);
  Tensor out = Tensor::from_matrix(tape.output);
  return {std::move(out), std::move(tape)};
}

void backward_pass(Network& net, const Tape& tape, const Tensor& output_grad) {
  net.backward(tape, output_grad.to_matrix());
}

// ---------------------------------------------------------------------------
// Losses

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double binary_cross_entropy(double prediction, int target) {
  if (target != 0 && target != 1) {
    throw ValidationError("binary cross-entropy target must be 0 or 1, got " +
                          std::to_string(target));
  }
  const double p = std::clamp(prediction, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return target == 1 ? -std::log(p) : -std::log1p(-p);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0) || !(config_.beta2 > 0.0 && config_.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0,1)");
  }
  if (!(config_.lr > 0.0) || !(config_.epsilon > 0.0)) {
    throw ConfigError("Adam learning rate and epsilon must be positive");
  }
}

void Adam::step(const std::vector<ParamSet*>& groups) {
  std::vector<Param*> trainable;
  for (ParamSet* group : groups) {
    for (Param& p : *group) {
      if (!p.trainable) continue;
      if (!p.has_grad) {
        throw ConfigError("Adam step before any backward pass: parameter '" + p.name +
                          "' has no gradient");
      }
      trainable.push_back(&p);
    }
  }
  if (m_.empty()) {
    for (const Param* p : trainable) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  } else if (m_.size() != trainable.size()) {
    throw DimensionError("Adam state tracks " + std::to_string(m_.size()) +
                         " parameters but step received " + std::to_string(trainable.size()));
  }

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < trainable.size(); ++k) {
    Param& p = *trainable[k];
    if (m_[k].rows() != p.value.rows() || m_[k].cols() != p.value.cols()) {
      throw DimensionError("Adam accumulator shape mismatch for '" + p.name + "'");
    }
    m_[k] = b1 * m_[k] + (1.0 - b1) * p.grad;
    v_[k] = b2 * v_[k] + (1.0 - b2) * p.grad.cwiseAbs2();
    const auto m_hat = m_[k].array() / correction1;
    const auto v_hat = v_[k].array() / correction2;
    p.value.array() -= config_.lr * m_hat / (v_hat.sqrt() + config_.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Gradient check

double gradient_check(Network& net, const Matrix& input, const LossFn& loss, double h,
                      const GradientTamper& tamper) {
  net.zero_grad();
  const Tape tape = net.forward(input, Mode::train);
  Matrix out_grad = Matrix::Zero(tape.output.rows(), tape.output.cols());
  loss(tape.output, out_grad);
  net.backward(tape, out_grad);
  if (tamper) tamper(net.params());

  auto evaluate = [&] {
    const Tape t = net.forward(input, Mode::train);
    Matrix scratch = Matrix::Zero(t.output.rows(), t.output.cols());
    return loss(t.output, scratch);
  };

  double worst = 0.0;
  for (Param& p : net.params()) {
    if (!p.trainable) continue;
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& slot = p.value.data()[k];
      const double saved = slot;
      slot = saved + h;
      const double up = evaluate();
      slot = saved - h;
      const double down = evaluate();
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace igmmgan
