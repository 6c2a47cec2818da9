#pragma once

#include "tcl/common.hpp"
#include "tcl/mixture.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace tcl {

inline constexpr double kLogEpsilon = 1e-12;

/// Bootstrapped targets for one sample (or K x B batches, column per sample).
struct SoftTarget {
  Matrix t1;   // w * y + (1 - w) * g(view1)
  Matrix t2;   // w * y + (1 - w) * g(view2)
  Matrix avg;  // (t1 + t2) / 2
};

/// Predictions enter by value and are never differentiated through.
SoftTarget correct_targets(const Vector& onehot, double weight, const Vector& g1, const Vector& g2);
SoftTarget correct_targets(std::span<const int> labels, std::span<const double> weights, const Matrix& g1,
                           const Matrix& g2);

Vector one_hot(int label, int num_classes);

/// -sum_k t_k log(max(p_k, kLogEpsilon))
double cross_entropy(const Vector& probs, const Vector& target);

/// A loss value plus its derivative with respect to each differentiable input.
struct LossTerm {
  double value = 0.0;
  Matrix d_first;
  Matrix d_second;
};

/// mean_i [ CE(p1_i, t2_i) + CE(p2_i, t1_i) ]; derivatives w.r.t. p1 and p2.
LossTerm cross_loss(const Matrix& p1, const Matrix& p2, const SoftTarget& targets);

/// -H(mean_i p_i) + mean_i H(p_i); derivative w.r.t. the prediction batch.
LossTerm reg_loss(const Matrix& preds);

/// Symmetric in-batch InfoNCE over 2N unit embeddings. Each anchor's denominator runs over the other
/// 2N - 1 embeddings. Averaged over all 2N anchors; derivatives w.r.t. z1 and z2.
LossTerm ctr_loss(const Matrix& z1, const Matrix& z2, double tau);

/// mean_i [ CE(g_mix_i, t_i) + CE(posterior(gmm, v_mix_i), t_i) ].
/// d_first is w.r.t. g_mix, d_second w.r.t. v_mix; the mixture parameters are constants.
LossTerm align_loss(const Matrix& g_mix, const Matrix& v_mix, const GmmState& gmm, const Matrix& t_mix);

struct LossBreakdown {
  double cross = 0.0;
  double reg = 0.0;
  double ctr = 0.0;
  double align = 0.0;
  double total = 0.0;
};

/// Unweighted sum. Throws NonFiniteError if any part is NaN/Inf.
LossBreakdown total_loss(double cross, double reg, double ctr, double align);

/// `epoch,step,cross,reg,ctr,align,total`
void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, int epoch, int step, const LossBreakdown& parts);

}  // namespace tcl
