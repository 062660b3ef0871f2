#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "igmmgan/nn.hpp"
#include "igmmgan/weights_io.hpp"

namespace igmmgan {

/// One hidden block of a network preset: dense (+ optional batch-norm) + activation.
struct Block {
  std::size_t width = 1;
  bool batch_norm = false;
  Activation activation = Activation::linear;
};

/// Hidden-layer blocks of the three networks. The encoder always ends in a
/// linear dense layer of latent width, the generator in a linear dense layer
/// of data width, and the discriminator's joint head in a single logit.
struct Architecture {
  std::string preset = "desk";
  std::vector<Block> encoder;
  std::vector<Block> generator;
  std::vector<Block> disc_x;
  std::vector<Block> disc_z;
  std::vector<Block> disc_joint;

  /// "reference": layer counts and widths of the reference architecture, with
  /// convolutions realized as dense layers. "desk": narrower widths for CPU runs.
  static Architecture from_preset(const std::string& name);
};

struct BiGANConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> data_shape = {4, 32};
  Architecture architecture = Architecture::from_preset("desk");
  std::size_t batch_size = 128;
  std::size_t total_steps = 10000;
  AdamConfig adam{};
  double recon_weight = 1.0;
  double adversarial_weight = 1.0;
  bool zero_init_disc_output = true;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;

  std::size_t data_dim() const;
  /// Throws ConfigError on latent_dim < 1, batch_size < 2, negative weights.
  void validate() const;
};

void to_json(nlohmann::json& j, const BiGANConfig& c);
void from_json(const nlohmann::json& j, BiGANConfig& c);

struct StepLosses {
  double d_loss = 0.0;
  double ge_loss = 0.0;
  double recon_loss = 0.0;
  bool operator==(const StepLosses&) const = default;
};

/// Discriminator over (x, z) pairs: an x branch and a z branch whose outputs
/// are concatenated and fed to a joint head ending in one logit.
class Discriminator {
 public:
  struct Trace {
    Tape x_tape, z_tape, joint_tape;
    Matrix logits;
    Matrix probs;
  };

  Discriminator() = default;
  Discriminator(Network x_branch, Network z_branch, Network joint);

  Trace forward(const Matrix& x, const Matrix& z, Mode mode) const;
  /// Accumulates parameter gradients; returns (dL/dx, dL/dz).
  std::pair<Matrix, Matrix> backward(const Trace& trace, const Matrix& logit_grad);
  void update_running_stats(const Trace& trace);
  void zero_grad();

  Network& x_branch() { return x_branch_; }
  Network& z_branch() { return z_branch_; }
  Network& joint() { return joint_; }
  const Network& x_branch() const { return x_branch_; }
  const Network& z_branch() const { return z_branch_; }
  const Network& joint() const { return joint_; }
  std::vector<ParamSet*> param_groups();

 private:
  Network x_branch_, z_branch_, joint_;
};

struct BiGANModel {
  BiGANConfig config;
  Network encoder;
  Network generator;
  Discriminator discriminator;
  Adam disc_optimizer;
  Adam ge_optimizer;
  std::vector<StepLosses> history;
  std::size_t steps_trained = 0;

  /// Builds freshly initialized networks from the config.
  static BiGANModel create(const BiGANConfig& config);
};

/// count x d standard normal draws.
Tensor sample_latent(std::size_t count, std::size_t d, Rng& rng);

Tensor encode(const BiGANModel& model, const Tensor& x);
Tensor generate(const BiGANModel& model, const Tensor& z);
/// Sigmoid probability per row that (x, z) is a real pair (eval mode).
std::vector<double> discriminate(const BiGANModel& model, const Tensor& x, const Tensor& z);

Matrix encode(const BiGANModel& model, const Matrix& x);
Matrix generate(const BiGANModel& model, const Matrix& z);

/// Mean over rows of ||x_i - G(E(x_i))||_2 in eval mode.
double reconstruction_loss(const BiGANModel& model, const Matrix& x);

/// One discriminator update followed by one generator+encoder update.
/// Losses are evaluated before the respective update.
StepLosses train_step(BiGANModel& model, const Matrix& real_batch, Rng& rng);

/// Trains from scratch for config.total_steps steps on random batches.
/// Rows of `dataset` are flattened samples; values must lie in [-5, 5].
BiGANModel train_bigan(const BiGANConfig& config, const Matrix& dataset);
/// Continues training an existing model for `steps` steps.
void continue_training(BiGANModel& model, const Matrix& dataset, std::size_t steps, Rng& rng);

/// Full parameter dump of all five networks.
std::vector<NamedTensor> model_tensors(const BiGANModel& model);
/// Rebuilds the networks of `config` from a tensor dump (no optimizer state).
BiGANModel model_from_tensors(const BiGANConfig& config, const std::vector<NamedTensor>& tensors,
                              std::size_t steps_trained);

/// Writes step,d_loss,ge_loss,recon_loss rows.
void write_loss_history_csv(const std::filesystem::path& path, const std::vector<StepLosses>& history);

}  // namespace igmmgan
