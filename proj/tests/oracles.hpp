#pragma once

// Slow, loop-based reference computations shared by the unit tests and the acceptance binary.

#include "tcl/eval.hpp"
#include "tcl/mixture.hpp"
#include "tcl/model.hpp"
#include "tcl/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <vector>

namespace tcl::oracle {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Largest relative error between `analytic` and central differences of `loss` over every parameter.
inline double max_gradient_error(const ModelParams& params, const Gradients& analytic,
                                 const std::function<double(const ModelParams&)>& loss, double step = 1e-5) {
  ModelParams probe = params;
  auto probe_layers = probe.layers();
  auto grad_layers = analytic.layers();
  double worst = 0.0;
  for (std::size_t l = 0; l < probe_layers.size(); ++l) {
    auto check = [&](double& slot, double expected) {
      const double saved = slot;
      slot = saved + step;
      const double up = loss(probe);
      slot = saved - step;
      const double down = loss(probe);
      slot = saved;
      worst = std::max(worst, relative_error(expected, (up - down) / (2.0 * step)));
    };
    DenseLayer& layer = *probe_layers[l];
    const DenseLayer& g = *grad_layers[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check(layer.weight(r, c), g.weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) check(layer.bias[r], g.bias[r]);
  }
  return worst;
}

/// The four loss terms evaluated through the network on a fixed small batch. Targets and the mixture
/// are frozen at construction, mirroring the stop-gradient in training.
struct LossFixture {
  ModelParams params;
  Matrix view1, view2, mix_inputs;
  std::vector<int> labels;
  std::vector<double> weights;
  SoftTarget targets;
  Matrix mix_targets;
  GmmState gmm;
  double tau = 0.5;

  /// Smallest |pre-activation| over every ReLU unit and every fixture input. Central differences are
  /// only meaningful when no unit switches on or off within the step.
  double relu_margin() const {
    double margin = std::numeric_limits<double>::infinity();
    for (const Matrix* inputs : {&view1, &view2, &mix_inputs}) {
      const ForwardResult r = forward(params, *inputs);
      for (const Matrix& z : r.cache.trunk_pre) margin = std::min(margin, z.cwiseAbs().minCoeff());
      margin = std::min({margin, r.cache.f_pre.cwiseAbs().minCoeff(), r.cache.g_pre.cwiseAbs().minCoeff()});
    }
    return margin;
  }

  /// Draws fixtures from `seed` onward until every ReLU pre-activation is at least `margin` from zero.
  static LossFixture make(std::uint64_t seed, int d = 4, int e = 4, int k = 3, int batch = 5, double margin = 1e-3) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      LossFixture fx = draw(seed * 1000 + attempt, d, e, k, batch);
      if (fx.relu_margin() >= margin) return fx;
    }
  }

  static LossFixture draw(std::uint64_t seed, int d, int e, int k, int batch) {
    LossFixture fx;
    ModelShape shape{d, 8, e, k, 2};
    fx.params = init_params(shape, seed);
    // Push the classifier away from uniform so the cross-entropy terms have sizable gradients.
    fx.params.head_g[1].weight *= 60.0;
    std::mt19937_64 rng(seed * 7 + 3);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Nonzero biases keep every embedding away from the origin, where normalization is not differentiable.
    for (DenseLayer* layer : fx.params.layers())
      for (Eigen::Index i = 0; i < layer->bias.size(); ++i) layer->bias[i] = 0.1 * normal(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto random_matrix = [&](Eigen::Index r, Eigen::Index c) {
      Matrix m(r, c);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
      return m;
    };
    fx.view1 = random_matrix(d, batch);
    fx.view2 = fx.view1 + 0.3 * random_matrix(d, batch);
    fx.mix_inputs = random_matrix(d, batch);
    for (int i = 0; i < batch; ++i) {
      fx.labels.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(k)));
      fx.weights.push_back(unit(rng));
    }
    const Matrix p1 = forward(fx.params, fx.view1).probs;
    const Matrix p2 = forward(fx.params, fx.view2).probs;
    fx.targets = correct_targets(fx.labels, fx.weights, p1, p2);
    fx.mix_targets = fx.targets.avg;

    fx.gmm.means = random_matrix(e, k);
    fx.gmm.means.colwise().normalize();
    fx.gmm.variances.resize(k);
    for (int c = 0; c < k; ++c) fx.gmm.variances[c] = 0.4 + 0.3 * unit(rng);
    return fx;
  }

  Matrix both_views() const {
    Matrix v(view1.rows(), 2 * view1.cols());
    v << view1, view2;
    return v;
  }

  double cross(const ModelParams& p) const {
    return cross_loss(forward(p, view1).probs, forward(p, view2).probs, targets).value;
  }
  double reg(const ModelParams& p) const { return reg_loss(forward(p, both_views()).probs).value; }
  double ctr(const ModelParams& p) const {
    return ctr_loss(forward(p, view1).embeddings, forward(p, view2).embeddings, tau).value;
  }
  double align(const ModelParams& p) const {
    const auto fwd = forward(p, mix_inputs);
    return align_loss(fwd.probs, fwd.embeddings, gmm, mix_targets).value;
  }
  double total(const ModelParams& p) const { return cross(p) + reg(p) + ctr(p) + align(p); }

  Gradients cross_grad() const {
    const auto fwd = forward(params, both_views());
    const Eigen::Index b = view1.cols();
    const LossTerm t = cross_loss(fwd.probs.leftCols(b), fwd.probs.rightCols(b), targets);
    OutputGradients up;
    up.d_probs.resize(fwd.probs.rows(), 2 * b);
    up.d_probs << t.d_first, t.d_second;
    return backward(params, fwd, up, t.value);
  }
  Gradients reg_grad() const {
    const auto fwd = forward(params, both_views());
    const LossTerm t = reg_loss(fwd.probs);
    return backward(params, fwd, {Matrix(), t.d_first}, t.value);
  }
  Gradients ctr_grad() const {
    const auto fwd = forward(params, both_views());
    const Eigen::Index b = view1.cols();
    const LossTerm t = ctr_loss(fwd.embeddings.leftCols(b), fwd.embeddings.rightCols(b), tau);
    OutputGradients up;
    up.d_embeddings.resize(fwd.embeddings.rows(), 2 * b);
    up.d_embeddings << t.d_first, t.d_second;
    return backward(params, fwd, up, t.value);
  }
  Gradients align_grad() const {
    const auto fwd = forward(params, mix_inputs);
    const LossTerm t = align_loss(fwd.probs, fwd.embeddings, gmm, mix_targets);
    return backward(params, fwd, {t.d_second, t.d_first}, t.value);
  }
  Gradients total_grad() const {
    Gradients g = cross_grad();
    axpy(1.0, reg_grad(), g);
    axpy(1.0, ctr_grad(), g);
    axpy(1.0, align_grad(), g);
    return g;
  }
};

struct GmmReference {
  std::vector<std::vector<double>> means;  // [k][dim]
  std::vector<double> variances;
};

/// Hard-assignment class means and mean squared distances, one loop per quantity.
inline GmmReference brute_force_gmm(const Matrix& embeddings, const std::vector<int>& labels, int num_classes) {
  const auto dim = static_cast<std::size_t>(embeddings.rows());
  GmmReference ref;
  ref.means.assign(static_cast<std::size_t>(num_classes), std::vector<double>(dim, 0.0));
  ref.variances.assign(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> count(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    count[k] += 1.0;
    for (std::size_t r = 0; r < dim; ++r)
      ref.means[k][r] += embeddings(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
  }
  for (std::size_t k = 0; k < ref.means.size(); ++k) {
    double norm = 0.0;
    for (double& x : ref.means[k]) {
      x /= count[k];
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : ref.means[k]) x /= norm;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    double dist = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
      const double diff = embeddings(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) - ref.means[k][r];
      dist += diff * diff;
    }
    ref.variances[k] += dist / count[k];
  }
  for (double& v : ref.variances) v = std::max(v, kGmmVarianceFloor);
  return ref;
}

struct BinaryReference {
  std::array<double, 2> mean{}, var{}, weight{};
  std::vector<double> trace;
  int iterations = 0;
};

/// Two-component EM written against the documented contract, not the library code.
inline BinaryReference reference_binary_em(std::vector<double> x) {
  const double n = static_cast<double>(x.size());
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const double lo = std::floor(pos);
    const double hi = std::min(lo + 1.0, n - 1.0);
    return s[static_cast<std::size_t>(lo)] +
           (pos - lo) * (s[static_cast<std::size_t>(hi)] - s[static_cast<std::size_t>(lo)]);
  };
  double mu = 0.0;
  for (double v : x) mu += v / n;
  double spread = 0.0;
  for (double v : x) spread += (v - mu) * (v - mu) / n;
  spread = std::max(spread, kBinaryVarianceFloor);

  BinaryReference r;
  r.mean = {quantile(0.1), quantile(0.9)};
  r.var = {spread, spread};
  r.weight = {0.5, 0.5};
  auto log_joint = [&](int c, double v) {
    return std::log(r.weight[c]) - 0.5 * std::log(2.0 * std::numbers::pi * r.var[c]) -
           (v - r.mean[c]) * (v - r.mean[c]) / (2.0 * r.var[c]);
  };
  auto log_lik = [&] {
    double total = 0.0;
    for (double v : x) {
      const double a = log_joint(0, v), b = log_joint(1, v);
      const double m = std::max(a, b);
      total += m + std::log(std::exp(a - m) + std::exp(b - m));
    }
    return total;
  };
  std::vector<double> g(x.size());
  for (int it = 0; it < kBinaryMaxIterations; ++it) {
    r.trace.push_back(log_lik());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 1.0 / (1.0 + std::exp(log_joint(0, x[i]) - log_joint(1, x[i])));
    const auto previous = r.mean;
    for (int c = 0; c < 2; ++c) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double resp = c == 1 ? g[i] : 1.0 - g[i];
        nk += resp;
        sx += resp * x[i];
      }
      r.weight[c] = nk / n;
      if (nk <= 0.0) continue;
      r.mean[c] = sx / nk;
      double sxx = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double resp = c == 1 ? g[i] : 1.0 - g[i];
        sxx += resp * (x[i] - r.mean[c]) * (x[i] - r.mean[c]);
      }
      r.var[c] = std::max(sxx / nk, kBinaryVarianceFloor);
    }
    r.iterations = it + 1;
    if (std::abs(r.mean[0] - previous[0]) < kBinaryTolerance && std::abs(r.mean[1] - previous[1]) < kBinaryTolerance)
      break;
  }
  r.trace.push_back(log_lik());
  return r;
}

/// Fraction of clean/noisy pairs ranked correctly; ties count one half.
inline double pairwise_auc(const std::vector<DetectionRecord>& records) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& c : records) {
    if (!c.is_clean) continue;
    for (const auto& m : records) {
      if (m.is_clean) continue;
      pairs += 1.0;
      if (c.score > m.score) wins += 1.0;
      else if (c.score == m.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Full sort of every training point by cosine similarity for each query, then a counted vote.
inline std::vector<int> brute_knn(const Matrix& train, const std::vector<int>& labels, const Matrix& test, int k) {
  std::vector<int> out;
  for (Eigen::Index q = 0; q < test.cols(); ++q) {
    std::vector<std::pair<double, Eigen::Index>> sims;
    for (Eigen::Index i = 0; i < train.cols(); ++i) {
      const double cos = train.col(i).dot(test.col(q)) / (train.col(i).norm() * test.col(q).norm());
      sims.emplace_back(-cos, i);
    }
    std::sort(sims.begin(), sims.end());
    std::map<int, int> votes;
    std::map<int, int> first_seen;
    for (int j = 0; j < k; ++j) {
      const int label = labels[static_cast<std::size_t>(sims[static_cast<std::size_t>(j)].second)];
      ++votes[label];
      first_seen.try_emplace(label, j);
    }
    int best = -1;
    for (const auto& [label, count] : votes) {
      if (best < 0 || count > votes[best] || (count == votes[best] && first_seen[label] < first_seen[best])) best = label;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace tcl::oracle
