#include "tcl/objectives.hpp"

#include "tcl/text_io.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

namespace tcl {

namespace {

void check_simplex(const Matrix& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if ((m.col(j).array() < -1e-12).any() || std::abs(m.col(j).sum() - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) + ": column " + std::to_string(j) + " is not on the simplex");
  }
}

double safe_log(double p) { return std::log(std::max(p, kLogEpsilon)); }

// Mean over columns of CE(p_j, t_j); writes d/dp into `grad` scaled by `scale`.
double batch_cross_entropy(const Matrix& probs, const Matrix& targets, double scale, Matrix& grad) {
  grad.setZero(probs.rows(), probs.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    for (Eigen::Index k = 0; k < probs.rows(); ++k) {
      const double t = targets(k, j);
      if (t == 0.0) continue;
      const double p = probs(k, j);
      total -= t * safe_log(p);
      if (p > kLogEpsilon) grad(k, j) = -scale * t / p;
    }
  }
  return total * scale;
}

}  // namespace

Vector one_hot(int label, int num_classes) {
  if (label < 0 || label >= num_classes) throw std::out_of_range("one_hot: label out of range");
  Vector v = Vector::Zero(num_classes);
  v[label] = 1.0;
  return v;
}

SoftTarget correct_targets(const Vector& onehot, double weight, const Vector& g1, const Vector& g2) {
  require(weight >= 0.0 && weight <= 1.0, "correct_targets: weight must lie in [0, 1]");
  if (onehot.size() != g1.size() || onehot.size() != g2.size()) throw ShapeError("correct_targets: size mismatch");
  check_simplex(onehot, "correct_targets(y)");
  check_simplex(g1, "correct_targets(g1)");
  check_simplex(g2, "correct_targets(g2)");
  SoftTarget t;
  t.t1 = weight * onehot + (1.0 - weight) * g1;
  t.t2 = weight * onehot + (1.0 - weight) * g2;
  t.avg = 0.5 * (t.t1 + t.t2);
  return t;
}

SoftTarget correct_targets(std::span<const int> labels, std::span<const double> weights, const Matrix& g1,
                           const Matrix& g2) {
  const auto batch = static_cast<Eigen::Index>(labels.size());
  if (static_cast<Eigen::Index>(weights.size()) != batch || g1.cols() != batch || g2.cols() != batch ||
      g1.rows() != g2.rows())
    throw ShapeError("correct_targets: batch shape mismatch");
  check_simplex(g1, "correct_targets(g1)");
  check_simplex(g2, "correct_targets(g2)");
  SoftTarget t;
  t.t1.resize(g1.rows(), batch);
  t.t2.resize(g1.rows(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    require(w >= 0.0 && w <= 1.0, "correct_targets: weight must lie in [0, 1]");
    const Vector y = one_hot(labels[static_cast<std::size_t>(j)], static_cast<int>(g1.rows()));
    t.t1.col(j) = w * y + (1.0 - w) * g1.col(j);
    t.t2.col(j) = w * y + (1.0 - w) * g2.col(j);
  }
  t.avg = 0.5 * (t.t1 + t.t2);
  return t;
}

double cross_entropy(const Vector& probs, const Vector& target) {
  if (probs.size() != target.size()) throw ShapeError("cross_entropy: size mismatch");
  double loss = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k)
    if (target[k] != 0.0) loss -= target[k] * safe_log(probs[k]);
  return loss;
}

LossTerm cross_loss(const Matrix& p1, const Matrix& p2, const SoftTarget& targets) {
  if (p1.rows() != p2.rows() || p1.cols() != p2.cols() || targets.t1.rows() != p1.rows() ||
      targets.t1.cols() != p1.cols() || targets.t2.rows() != p1.rows() || targets.t2.cols() != p1.cols())
    throw ShapeError("cross_loss: shape mismatch");
  const double scale = 1.0 / static_cast<double>(p1.cols());
  LossTerm out;
  // Each view is supervised by the target built from the other view.
  out.value = batch_cross_entropy(p1, targets.t2, scale, out.d_first) +
              batch_cross_entropy(p2, targets.t1, scale, out.d_second);
  return out;
}

LossTerm reg_loss(const Matrix& preds) {
  const Eigen::Index batch = preds.cols();
  if (batch < 1) throw std::invalid_argument("reg_loss: empty batch");
  const double scale = 1.0 / static_cast<double>(batch);
  const Vector mean = preds.rowwise().mean();

  LossTerm out;
  out.d_first.resize(preds.rows(), batch);
  double neg_mean_entropy = 0.0;  // -H(mean)
  Vector d_mean(preds.rows());
  for (Eigen::Index k = 0; k < preds.rows(); ++k) {
    neg_mean_entropy += mean[k] * safe_log(mean[k]);
    d_mean[k] = mean[k] > kLogEpsilon ? safe_log(mean[k]) + 1.0 : safe_log(mean[k]);
  }
  double avg_entropy = 0.0;  // mean_i H(p_i)
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index k = 0; k < preds.rows(); ++k) {
      const double p = preds(k, j);
      avg_entropy -= scale * p * safe_log(p);
      const double d_entropy = p > kLogEpsilon ? -(safe_log(p) + 1.0) : -safe_log(p);
      out.d_first(k, j) = scale * (d_mean[k] + d_entropy);
    }
  }
  out.value = neg_mean_entropy + avg_entropy;
  return out;
}

LossTerm ctr_loss(const Matrix& z1, const Matrix& z2, double tau) {
  require(tau > 0.0, "ctr_loss: temperature must be positive");
  const Eigen::Index n = z1.cols();
  if (n < 2) throw std::invalid_argument("ctr_loss: batch size must be at least 2");
  if (z2.cols() != n || z1.rows() != z2.rows()) throw ShapeError("ctr_loss: view shape mismatch");

  const Eigen::Index total = 2 * n;
  Matrix z(z1.rows(), total);
  z << z1, z2;
  const Matrix sim = (z.transpose() * z) / tau;

  // grad_sim(a, b) = d loss / d sim(a, b)
  Matrix grad_sim = Matrix::Zero(total, total);
  const double scale = 1.0 / static_cast<double>(total);
  double loss = 0.0;
  for (Eigen::Index a = 0; a < total; ++a) {
    const Eigen::Index pos = a < n ? a + n : a - n;
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < total; ++b)
      if (b != a) row_max = std::max(row_max, sim(a, b));
    double denom = 0.0;
    for (Eigen::Index b = 0; b < total; ++b)
      if (b != a) denom += std::exp(sim(a, b) - row_max);
    const double log_denom = row_max + std::log(denom);
    loss += log_denom - sim(a, pos);
    for (Eigen::Index b = 0; b < total; ++b)
      if (b != a) grad_sim(a, b) = scale * std::exp(sim(a, b) - log_denom);
    grad_sim(a, pos) -= scale;
  }

  const Matrix d_z = z * (grad_sim + grad_sim.transpose()) / tau;
  LossTerm out;
  out.value = loss * scale;
  out.d_first = d_z.leftCols(n);
  out.d_second = d_z.rightCols(n);
  return out;
}

LossTerm align_loss(const Matrix& g_mix, const Matrix& v_mix, const GmmState& gmm, const Matrix& t_mix) {
  const Eigen::Index batch = g_mix.cols();
  if (batch < 1) throw std::invalid_argument("align_loss: empty batch");
  if (v_mix.cols() != batch || t_mix.cols() != batch || t_mix.rows() != g_mix.rows() ||
      g_mix.rows() != gmm.num_classes())
    throw ShapeError("align_loss: shape mismatch");
  check_simplex(g_mix, "align_loss(g_mix)");
  check_simplex(t_mix, "align_loss(t_mix)");

  const double scale = 1.0 / static_cast<double>(batch);
  const Matrix gamma = posterior(gmm, v_mix);
  LossTerm out;
  Matrix d_gamma;
  out.value = batch_cross_entropy(g_mix, t_mix, scale, out.d_first) + batch_cross_entropy(gamma, t_mix, scale, d_gamma);
  out.d_second.resize(v_mix.rows(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) out.d_second.col(j) = posterior_vjp(gmm, gamma.col(j), d_gamma.col(j));
  return out;
}

LossBreakdown total_loss(double cross, double reg, double ctr, double align) {
  if (!std::isfinite(cross) || !std::isfinite(reg) || !std::isfinite(ctr) || !std::isfinite(align))
    throw NonFiniteError("total_loss: non-finite part (cross=" + std::to_string(cross) + ", reg=" +
                         std::to_string(reg) + ", ctr=" + std::to_string(ctr) + ", align=" + std::to_string(align) + ")");
  LossBreakdown b{cross, reg, ctr, align, 0.0};
  b.total = (cross + reg) + ctr + align;
  return b;
}

void write_loss_header(std::ostream& out) { out << "epoch,step,cross,reg,ctr,align,total\n"; }

void write_loss_row(std::ostream& out, int epoch, int step, const LossBreakdown& p) {
  out << epoch << ',' << step << ',' << text::format_double(p.cross) << ',' << text::format_double(p.reg) << ','
      << text::format_double(p.ctr) << ',' << text::format_double(p.align) << ',' << text::format_double(p.total)
      << '\n';
}

}  // namespace tcl
