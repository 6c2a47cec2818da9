#include "tcl/trainer.hpp"

#include "tcl/eval.hpp"
#include "tcl/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace tcl {

void TrainConfig::validate() const {
  require(epochs >= 0, "config: epochs must be nonnegative");
  require(warmup_epochs >= 0, "config: warmup_epochs must be nonnegative");
  require(batch_size >= 2, "config: batch_size must be at least 2");
  require(base_lr >= 0.0, "config: base_lr must be nonnegative");
  require(momentum >= 0.0 && momentum < 1.0, "config: momentum must lie in [0, 1)");
  require(weight_decay >= 0.0 && weight_decay < 1.0, "config: weight_decay must lie in [0, 1)");
  require(tau > 0.0, "config: tau must be positive");
  require(mixup_alpha > 0.0, "config: mixup_alpha must be positive");
  require(embedding_dim >= 2, "config: embedding_dim must be at least 2");
  require(hidden_dim >= 1, "config: hidden_dim must be positive");
  require(update_frequency >= 1, "config: update_frequency must be at least 1");
  require(aug_strength >= 0.0, "config: aug_strength must be nonnegative");
  require(checkpoint_every >= 0, "config: checkpoint_every must be nonnegative");
}

int argmax(const Vector& probs) {
  int best = 0;
  for (Eigen::Index k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[best]) best = static_cast<int>(k);
  return best;
}

int predict(const ModelParams& params, const Vector& x) { return argmax(forward(params, x).probs.col(0)); }

std::vector<int> predict_all(const ModelParams& params, const Dataset& dataset) {
  if (dataset.size() == 0) return {};
  const auto fwd = forward(params, dataset.feature_matrix());
  std::vector<int> out(dataset.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(fwd.probs.col(static_cast<Eigen::Index>(i)));
  return out;
}

EpochState e_step(const Dataset& dataset, const ModelParams& params, const EpochState* previous) {
  if (!params.all_finite()) throw NonFiniteError("e_step: model parameters are not finite");
  const auto fwd = forward(params, dataset.feature_matrix());

  EpochState state;
  state.gmm = update_gmm(fwd.embeddings, fwd.probs, previous ? &previous->gmm : nullptr);

  const Matrix gamma = posterior(state.gmm, fwd.embeddings);
  state.clean_probs.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    state.clean_probs[i] = gamma(dataset.samples[i].noisy_label, static_cast<Eigen::Index>(i));

  try {
    state.binary = fit_binary_gmm(state.clean_probs);
  } catch (const DegenerateError& err) {
    if (previous == nullptr || previous->clean_weights.size() != dataset.size()) throw;
    state.warnings.push_back(std::string("binary mixture fit degenerate, keeping previous clean weights: ") +
                             err.what());
    state.binary = previous->binary;
    state.clean_weights = previous->clean_weights;
    return state;
  }

  state.clean_weights.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    state.clean_weights[i] = clean_posterior(state.binary, state.clean_probs[i]);
  return state;
}

namespace {

Rng epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7c1u};
  return Rng(seq);
}

LossBreakdown mean_of(const std::vector<LossBreakdown>& steps) {
  LossBreakdown m;
  if (steps.empty()) return m;
  for (const auto& s : steps) {
    m.cross += s.cross;
    m.reg += s.reg;
    m.ctr += s.ctr;
    m.align += s.align;
    m.total += s.total;
  }
  const double n = static_cast<double>(steps.size());
  m.cross /= n;
  m.reg /= n;
  m.ctr /= n;
  m.align /= n;
  m.total /= n;
  return m;
}

}  // namespace

EpochLosses m_step_epoch(const Dataset& dataset, ModelParams& params, OptimizerState& opt, const EpochState& state,
                         int epoch, const TrainConfig& config) {
  if (state.clean_weights.size() != dataset.size())
    throw std::invalid_argument("m_step_epoch: epoch state does not match the dataset");
  const double lr = lr_schedule(epoch, opt);
  Rng rng = epoch_rng(config.seed, epoch);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const int dim = dataset.dim();
  EpochLosses result;
  int step = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size, ++step) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    if (b < 2) continue;
    const auto nb = static_cast<Eigen::Index>(b);

    // Two strong views side by side, plus weak copies and mixing partners for the mixup view.
    Matrix views(dim, 2 * nb);
    Matrix weak(dim, nb);
    std::vector<ViewTriple> triples(b);
    std::uniform_int_distribution<std::size_t> partner(0, b - 1);
    std::vector<std::size_t> partners(b);
    std::vector<int> labels(b);
    std::vector<double> weights(b);
    for (std::size_t j = 0; j < b; ++j) {
      const auto& s = dataset.samples[order[start + j]];
      auto& t = triples[j];
      t.view1 = augment(s.features, config.aug_strength, rng);
      t.view2 = augment(s.features, config.aug_strength, rng);
      weak.col(static_cast<Eigen::Index>(j)) = augment_weak(s.features, 0.5 * config.aug_strength, rng);
      partners[j] = partner(rng);
      t.mix_lambda = sample_beta(config.mixup_alpha, rng);
      t.mix_partner = dataset.samples[order[start + partners[j]]].sample_id;
      views.col(static_cast<Eigen::Index>(j)) = t.view1;
      views.col(nb + static_cast<Eigen::Index>(j)) = t.view2;
      labels[j] = s.noisy_label;
      weights[j] = state.clean_weights[order[start + j]];
    }

    const ForwardResult fwd = forward(params, views);
    const Matrix p1 = fwd.probs.leftCols(nb);
    const Matrix p2 = fwd.probs.rightCols(nb);
    // Targets are built from detached copies of the predictions.
    const SoftTarget targets = correct_targets(labels, weights, p1, p2);

    Matrix mix_inputs(dim, nb);
    Matrix mix_targets(targets.avg.rows(), nb);
    for (std::size_t j = 0; j < b; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const auto pj = static_cast<Eigen::Index>(partners[j]);
      auto mixed = mixup_pair(weak.col(jj), targets.avg.col(jj), weak.col(pj), targets.avg.col(pj),
                              triples[j].mix_lambda);
      triples[j].mix_view = mixed.features;
      mix_inputs.col(jj) = mixed.features;
      mix_targets.col(jj) = mixed.target;
    }
    const ForwardResult fwd_mix = forward(params, mix_inputs);

    const LossTerm cross = cross_loss(p1, p2, targets);
    const LossTerm reg = reg_loss(fwd.probs);
    const LossTerm ctr = ctr_loss(fwd.embeddings.leftCols(nb), fwd.embeddings.rightCols(nb), config.tau);
    const LossTerm align = align_loss(fwd_mix.probs, fwd_mix.embeddings, state.gmm, mix_targets);

    LossBreakdown parts;
    try {
      parts = total_loss(cross.value, reg.value, ctr.value, align.value);
    } catch (const NonFiniteError& err) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(step) + ": " + err.what());
    }

    OutputGradients up;
    up.d_probs.resize(fwd.probs.rows(), 2 * nb);
    up.d_probs << cross.d_first, cross.d_second;
    up.d_probs += reg.d_first;
    up.d_embeddings.resize(fwd.embeddings.rows(), 2 * nb);
    up.d_embeddings << ctr.d_first, ctr.d_second;
    Gradients grads = backward(params, fwd, up, parts.total);
    axpy(1.0, backward(params, fwd_mix, {align.d_second, align.d_first}, parts.total), grads);

    sgd_step(params, grads, opt, lr);
    result.steps.push_back(parts);
  }
  result.mean = mean_of(result.steps);
  return result;
}

bool is_e_step_epoch(int epoch, const TrainConfig& config) {
  if (epoch < config.warmup_epochs) return epoch % config.update_frequency == 0;
  return (epoch - config.warmup_epochs) % config.update_frequency == 0;
}

double detection_auc_of(const Dataset& dataset, const std::vector<double>& scores) {
  std::vector<DetectionRecord> records(dataset.size());
  std::size_t clean = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    records[i] = {dataset.samples[i].sample_id, scores[i], dataset.samples[i].is_clean()};
    clean += records[i].is_clean ? 1 : 0;
  }
  if (clean == 0 || clean == dataset.size()) return std::numeric_limits<double>::quiet_NaN();
  return detection_auc(records);
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const Dataset& test, const TrainHooks& hooks) {
  config.validate();
  if (dataset.size() < 2) throw std::invalid_argument("train: need at least two training samples");
  if (test.size() != 0 && test.dim() != dataset.dim()) throw ShapeError("train: test set dimension differs");

  ModelShape shape;
  shape.input_dim = dataset.dim();
  shape.hidden_dim = config.hidden_dim;
  shape.embedding_dim = config.embedding_dim;
  shape.num_classes = dataset.num_classes;

  TrainResult result;
  result.params = init_params(shape, config.seed);
  if (config.epochs == 0) return result;

  OptimizerState opt = make_optimizer(result.params, config.momentum, config.weight_decay, config.base_lr,
                                      config.warmup_epochs, config.epochs);
  const auto true_train = dataset.true_labels();
  const auto true_test = test.true_labels();
  auto warn = [&](const std::vector<std::string>& messages) {
    if (hooks.on_warning)
      for (const auto& m : messages) hooks.on_warning(m);
  };

  std::optional<EpochState> state;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!state || is_e_step_epoch(epoch, config)) {
      state = e_step(dataset, result.params, state ? &*state : nullptr);
      warn(state->warnings);
    }
    EpochState used = *state;
    if (epoch < config.warmup_epochs || !config.correction)
      std::fill(used.clean_weights.begin(), used.clean_weights.end(), 1.0);

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_schedule(epoch, opt);
    auto losses = m_step_epoch(dataset, result.params, opt, used, epoch, config);
    m.loss = losses.mean;
    result.step_losses.push_back(std::move(losses.steps));

    m.acc_train = accuracy(predict_all(result.params, dataset), true_train);
    m.acc_test = test.size() ? accuracy(predict_all(result.params, test), true_test)
                             : std::numeric_limits<double>::quiet_NaN();
    m.auc_detect = detection_auc_of(dataset, state->clean_probs);
    double w_clean = 0.0, w_noisy = 0.0;
    std::size_t n_clean = 0, n_noisy = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.samples[i].is_clean()) {
        w_clean += used.clean_weights[i];
        ++n_clean;
      } else {
        w_noisy += used.clean_weights[i];
        ++n_noisy;
      }
    }
    m.mean_w_clean = n_clean ? w_clean / static_cast<double>(n_clean) : std::numeric_limits<double>::quiet_NaN();
    m.mean_w_noisy = n_noisy ? w_noisy / static_cast<double>(n_noisy) : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      hooks.on_checkpoint(epoch, result.params);
  }

  result.final_state = e_step(dataset, result.params, state ? &*state : nullptr);
  warn(result.final_state->warnings);
  return result;
}

void write_metrics_header(std::ostream& out) {
  out << "epoch,lr,acc_train,acc_test,auc_detect,mean_w_clean,mean_w_noisy,cross,reg,ctr,align,total\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  using text::format_double;
  out << m.epoch << ',' << format_double(m.lr) << ',' << format_double(m.acc_train) << ','
      << format_double(m.acc_test) << ',' << format_double(m.auc_detect) << ',' << format_double(m.mean_w_clean)
      << ',' << format_double(m.mean_w_noisy) << ',' << format_double(m.loss.cross) << ','
      << format_double(m.loss.reg) << ',' << format_double(m.loss.ctr) << ',' << format_double(m.loss.align) << ','
      << format_double(m.loss.total) << '\n';
}

}  // namespace tcl
