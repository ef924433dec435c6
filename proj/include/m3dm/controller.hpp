#pragma once

// Conditional attribute controller: an MLP f(p, s) over the parameter vector
// concatenated with the target score, applied residually (p + f) or directly
// (ablation), trained on paired samples with a random source/target swap.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "m3dm/latent_world.hpp"

namespace m3dm {

struct DenseLayer {
  MatrixXd W;  // out x in
  VectorXd b;  // out
};

enum class LossKind { norm, squared };

const char* to_string(LossKind k);

class Controller {
 public:
  Controller() = default;

  /// Layer dims [k+1, hidden..., k]. Hidden layers use He-uniform weights
  /// drawn from `seed`; the output layer starts at zero, so a residual
  /// controller is the identity map before training.
  Controller(int k, std::vector<int> hidden, bool residual, std::string attribute, std::uint64_t seed);

  /// Builds from explicit layers (deserialization). Validates shapes.
  Controller(std::vector<DenseLayer> layers, bool residual, std::string attribute);

  int k() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows()); }
  bool residual() const { return residual_; }
  const std::string& attribute() const { return attribute_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<int> layer_dims() const;

  /// p~ = p + MLP([p; s]) (residual) or MLP([p; s]) (ablation).
  VectorXd forward(const VectorXd& p, double s_trg) const;
  /// Column-batched forward: P is k x B, s has length B.
  MatrixXd forward_batch(const MatrixXd& P, const VectorXd& s) const;

  Eigen::Index n_parameters() const;
  VectorXd parameters() const;
  void set_parameters(const VectorXd& theta);

 private:
  std::vector<DenseLayer> layers_;
  bool residual_ = true;
  std::string attribute_;
};

struct LossGradient {
  double loss = 0.0;
  VectorXd grad;  // flattened in parameters() order
};

/// Mean over the batch of ||p_trg - p~||, or of its square with LossKind::squared.
/// Columns of p_src / p_trg are batch items.
double loss(const Controller& ctrl, const MatrixXd& p_src, const VectorXd& s_trg, const MatrixXd& p_trg,
            LossKind kind = LossKind::norm);

LossGradient loss_and_gradient(const Controller& ctrl, const MatrixXd& p_src, const VectorXd& s_trg,
                               const MatrixXd& p_trg, LossKind kind = LossKind::norm);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-6;  // decoupled
  std::uint64_t seed = 0;
  int hidden = 256;
  int hidden_layers = 2;
  double swap_probability = 0.5;
  LossKind loss = LossKind::norm;
  bool residual = true;
  bool single_precision = true;  // float32 weights and moments during training

  void validate() const;
};

struct TrainResult {
  Controller controller;
  std::vector<double> loss_history;  // mean training loss per epoch
};

/// Swap coin for one pair in one epoch; true means the positive member is the source.
bool swap_coin(std::uint64_t seed, int epoch, std::uint64_t sample_id, double swap_probability);

/// Minibatch order and swap coins are functions of (seed, epoch, sample id),
/// so results do not depend on the order of `samples`.
TrainResult train(std::span<const PairedSample> samples, const std::string& attribute,
                  const TrainConfig& cfg);

/// Continues training from an existing controller.
TrainResult train(Controller init, std::span<const PairedSample> samples, const TrainConfig& cfg);

}  // namespace m3dm
