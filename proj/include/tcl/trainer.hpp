#pragma once

#include "tcl/data.hpp"
#include "tcl/mixture.hpp"
#include "tcl/model.hpp"
#include "tcl/objectives.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tcl {

struct TrainConfig {
  int epochs = 60;
  int warmup_epochs = 5;
  int batch_size = 64;
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double tau = 0.25;
  double mixup_alpha = 1.0;
  int embedding_dim = 16;
  int hidden_dim = 64;
  int update_frequency = 1;  // epochs between E-steps
  double aug_strength = 0.3;
  /// false trains the noisy-label baseline: every clean weight is pinned to 1.
  bool correction = true;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochState {
  GmmState gmm;
  BinaryGmm binary;
  std::vector<double> clean_weights;  // w_i
  std::vector<double> clean_probs;    // gamma_{y=z|i}
  std::vector<std::string> warnings;
};

/// Refits the embedding mixture from un-augmented predictions, scores every label, and converts the
/// scores to clean weights with the two-component mixture. Degenerate fits reuse `previous` when given.
EpochState e_step(const Dataset& dataset, const ModelParams& params, const EpochState* previous = nullptr);

struct EpochLosses {
  std::vector<LossBreakdown> steps;
  LossBreakdown mean;
};

/// One pass of mini-batch SGD over the shuffled dataset using the clean weights in `state`.
/// Batches smaller than two samples are skipped (the contrastive term needs a negative).
EpochLosses m_step_epoch(const Dataset& dataset, ModelParams& params, OptimizerState& opt, const EpochState& state,
                         int epoch, const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double acc_train = 0.0;  // against true labels
  double acc_test = 0.0;
  double auc_detect = 0.0;  // NaN when the training set has a single clean/noisy class
  double mean_w_clean = 0.0;
  double mean_w_noisy = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;
  std::vector<std::vector<LossBreakdown>> step_losses;  // per epoch
  std::optional<EpochState> final_state;                // E-step on the returned parameters
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int epoch, const ModelParams&)> on_checkpoint;
  std::function<void(const std::string&)> on_warning;
};

/// `test` may be empty; acc_test is then NaN.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const Dataset& test, const TrainHooks& hooks = {});

bool is_e_step_epoch(int epoch, const TrainConfig& config);

/// argmax of the class probabilities; ties resolve to the lowest index.
int predict(const ModelParams& params, const Vector& x);
int argmax(const Vector& probs);
std::vector<int> predict_all(const ModelParams& params, const Dataset& dataset);

double detection_auc_of(const Dataset& dataset, const std::vector<double>& scores);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

}  // namespace tcl
