#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "igmmgan/tensor.hpp"

namespace igmmgan {

using Rng = std::mt19937_64;

enum class LayerKind { dense, batch_norm, activation };
enum class Activation { relu, leaky_relu, sigmoid, linear };
enum class Mode { train, eval };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
  Activation activation = Activation::linear;
  double slope = 0.2;  // leaky-ReLU negative slope
  bool bias = true;    // dense only

  static LayerSpec dense(std::size_t in, std::size_t out, bool bias = true);
  static LayerSpec batch_norm(std::size_t features);
  static LayerSpec act(std::size_t features, Activation a, double slope = 0.2);

  /// Throws ConfigError on fan-in/fan-out < 1, a slope outside (0,1), or a
  /// width-changing batch-norm/activation layer.
  void validate() const;
};

const char* to_string(LayerKind kind);
const char* to_string(Activation a);

/// One named parameter with its gradient slot.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
  bool has_grad = false;
};

/// Ordered named parameters; names are unique.
class ParamSet {
 public:
  std::size_t add(std::string name, Matrix value, bool trainable = true);

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  const Param& find(const std::string& name) const;
  Param& find(const std::string& name);

  std::vector<Param>::iterator begin() { return params_.begin(); }
  std::vector<Param>::iterator end() { return params_.end(); }
  std::vector<Param>::const_iterator begin() const { return params_.begin(); }
  std::vector<Param>::const_iterator end() const { return params_.end(); }

  void zero_grad();
  std::size_t trainable_count() const;

 private:
  std::vector<Param> params_;
};

/// Per-layer values a backward pass needs.
struct LayerTrace {
  Matrix input;
  Matrix normalized;  // batch-norm x-hat
  RowVector mean;     // batch-norm statistics used in this pass
  RowVector var;
  RowVector inv_std;
};

/// Activation record of one forward pass.
struct Tape {
  Mode mode = Mode::train;
  std::vector<LayerTrace> layers;
  Matrix output;
};

/// Feed-forward stack of dense, batch-norm, and activation layers.
///
/// Batch-norm uses biased batch statistics in train mode and running
/// statistics (EMA, momentum 0.9) in eval mode. Running statistics are only
/// touched by update_running_stats, so forward() itself never mutates.
class Network {
 public:
  static constexpr double kBatchNormEpsilon = 1e-5;
  static constexpr double kRunningMomentum = 0.9;

  Network() = default;
  /// Glorot-uniform weights, zero biases, unit BN scale, zero BN shift.
  Network(std::string name, std::vector<LayerSpec> layers, Rng& rng);
  /// Adopts an existing parameter set; names and shapes must match the layers.
  Network(std::string name, std::vector<LayerSpec> layers, ParamSet params);

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t in_width() const;
  std::size_t out_width() const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tape forward(const Matrix& input, Mode mode) const;
  Matrix predict(const Matrix& input) const { return forward(input, Mode::eval).output; }

  /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
  Matrix backward(const Tape& tape, const Matrix& output_grad);

  /// Folds the batch statistics of a train-mode tape into the running stats.
  void update_running_stats(const Tape& tape);

  /// Sets the last dense layer's weights and bias to zero.
  void zero_last_dense();

  void zero_grad() { params_.zero_grad(); }

 private:
  struct Slots {
    std::size_t weight = 0, bias = 0;             // dense
    std::size_t scale = 0, shift = 0;             // batch-norm
    std::size_t running_mean = 0, running_var = 0;
    bool has_bias = false;
  };

  void build_slots();
  std::string layer_label(std::size_t i) const;

  std::string name_;
  std::vector<LayerSpec> layers_;
  ParamSet params_;
  std::vector<Slots> slots_;
};

/// Tensor-level entry points.
struct ForwardResult {
  Tensor output;
  Tape tape;
};
ForwardResult forward_pass(const Network& net, const Tensor& input, Mode mode);
void backward_pass(Network& net, const Tape& tape, const Tensor& output_grad);

/// Prediction clamp used before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

/// -[t log p + (1-t) log(1-p)] with p clamped to [1e-7, 1-1e-7]. target must be 0 or 1.
double binary_cross_entropy(double prediction, int target);

double sigmoid(double x);

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over one or more parameter sets.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config);

  /// Throws ConfigError if any trainable parameter has no gradient yet.
  void step(const std::vector<ParamSet*>& groups);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Loss over a network output. Returns the loss and writes dLoss/dOutput.
using LossFn = std::function<double(const Matrix& output, Matrix& grad)>;

/// Hook applied to the analytic gradients before comparison (fault injection).
using GradientTamper = std::function<void(ParamSet&)>;

/// Max over trainable parameter entries of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), using central
/// differences of step h on train-mode forward passes.
double gradient_check(Network& net, const Matrix& input, const LossFn& loss, double h = 1e-5,
                      const GradientTamper& tamper = {});

}  // namespace igmmgan
