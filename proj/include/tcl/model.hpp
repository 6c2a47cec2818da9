#pragma once

#include "tcl/common.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace tcl {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

struct ModelShape {
  int input_dim = 0;
  int hidden_dim = 64;
  int embedding_dim = 16;
  int num_classes = 0;
  int trunk_layers = 2;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Shared ReLU trunk feeding two heads:
///   head_f: dense -> ReLU -> dense -> l2-normalize   (embedding, dimension e)
///   head_g: dense -> ReLU -> dense -> softmax        (class probabilities, dimension K)
struct ModelParams {
  std::vector<DenseLayer> trunk;
  std::array<DenseLayer, 2> head_f;
  std::array<DenseLayer, 2> head_g;

  ModelShape shape() const;
  bool all_finite() const;
  std::size_t parameter_count() const;

  /// Every layer in a fixed order: trunk, head_f, head_g.
  std::vector<DenseLayer*> layers();
  std::vector<const DenseLayer*> layers() const;
  static std::vector<std::string> layer_names(int trunk_layers);
};

bool operator==(const ModelParams& a, const ModelParams& b);

/// Parameter-shaped container for gradients and momentum buffers.
using Gradients = ModelParams;

ModelParams init_params(const ModelShape& shape, std::uint64_t seed);
Gradients zeros_like(const ModelParams& params);

/// this += scale * other, array by array.
void axpy(double scale, const ModelParams& other, ModelParams& target);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> trunk_pre;  // pre-activations per trunk layer
  std::vector<Matrix> trunk_out;  // post-ReLU outputs per trunk layer
  Matrix f_pre, f_hidden;         // first head_f layer
  Matrix f_raw;                   // unnormalized embedding
  Vector f_norm;                  // denominator used per column
  Matrix g_pre, g_hidden;
  Matrix logits;
};

/// Column j of every matrix belongs to input column j.
struct ForwardResult {
  Matrix embeddings;  // e x B, unit columns
  Matrix probs;       // K x B, columns on the simplex
  ForwardCache cache;
};

ForwardResult forward(const ModelParams& params, const Matrix& inputs);
ForwardResult forward(const ModelParams& params, const Vector& x);

/// Upstream derivatives of a scalar loss with respect to the network outputs.
struct OutputGradients {
  Matrix d_embeddings;  // e x B (empty means zero)
  Matrix d_probs;       // K x B (empty means zero)
};

/// Reverse-mode pass from output derivatives to parameter gradients.
/// Throws NonFiniteError when `loss` is NaN or infinite.
Gradients backward(const ModelParams& params, const ForwardResult& fwd, const OutputGradients& upstream,
                   double loss);

struct OptimizerState {
  Gradients momentum_buffer;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double base_lr = 0.03;
  int warmup_epochs = 0;
  int total_epochs = 1;
};

OptimizerState make_optimizer(const ModelParams& params, double momentum, double weight_decay, double base_lr,
                              int warmup_epochs, int total_epochs);

/// buffer <- momentum * buffer + grad + weight_decay * param;  param <- param - lr * buffer
void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& opt, double lr);

/// Linear warmup to base_lr at epoch == warmup_epochs, cosine decay afterwards.
double lr_schedule(int epoch, const OptimizerState& opt);

void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace tcl
