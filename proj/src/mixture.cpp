#include "tcl/mixture.hpp"

#include "tcl/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

namespace tcl {

GmmState update_gmm(const Matrix& embeddings, const Matrix& predictions, const GmmState* previous) {
  const Eigen::Index n = embeddings.cols();
  const Eigen::Index k_count = predictions.rows();
  if (n < 1) throw std::invalid_argument("update_gmm: need at least one embedding");
  if (predictions.cols() != n) throw ShapeError("update_gmm: one prediction per embedding required");
  if (previous != nullptr && (previous->means.cols() != k_count || previous->means.rows() != embeddings.rows()))
    throw ShapeError("update_gmm: previous state has a different shape");
  if (predictions.minCoeff() < 0.0 || ((predictions.colwise().sum().array() - 1.0).abs() > 1e-6).any())
    throw std::invalid_argument("update_gmm: every prediction must lie on the simplex");

  GmmState out;
  out.means.resize(embeddings.rows(), k_count);
  out.variances.resize(k_count);

  const Vector mass = predictions.rowwise().sum();
  const Matrix weighted_sum = embeddings * predictions.transpose();  // e x K
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const double norm = weighted_sum.col(k).norm();
    if (mass[k] < kGmmEmptyClassMass || norm / std::max(mass[k], kGmmEmptyClassMass) < 1e-12) {
      if (previous == nullptr)
        throw DegenerateError("update_gmm: class " + std::to_string(k) + " has no predicted mass");
      out.means.col(k) = previous->means.col(k);
      out.variances[k] = previous->variances[k];
      continue;
    }
    out.means.col(k) = weighted_sum.col(k) / norm;
    double scatter = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      scatter += predictions(k, i) * (embeddings.col(i) - out.means.col(k)).squaredNorm();
    out.variances[k] = std::max(scatter / mass[k], kGmmVarianceFloor);
  }
  return out;
}

namespace {

Vector stable_softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Vector posterior(const GmmState& gmm, const Vector& v) {
  if (v.size() != gmm.means.rows()) throw ShapeError("posterior: embedding dimension mismatch");
  Vector logits = (gmm.means.transpose() * v).cwiseQuotient(gmm.variances);
  return stable_softmax(logits);
}

Matrix posterior(const GmmState& gmm, const Matrix& embeddings) {
  if (embeddings.rows() != gmm.means.rows()) throw ShapeError("posterior: embedding dimension mismatch");
  Matrix logits = gmm.means.transpose() * embeddings;
  logits.array().colwise() /= gmm.variances.array();
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out.col(j) = stable_softmax(logits.col(j));
  return out;
}

Vector posterior_vjp(const GmmState& gmm, const Vector& gamma, const Vector& d_gamma) {
  const Vector d_logits = (gamma.array() * (d_gamma.array() - gamma.dot(d_gamma))).matrix();
  return gmm.means * d_logits.cwiseQuotient(gmm.variances);
}

double clean_prob(const GmmState& gmm, const Vector& v, int label) {
  if (label < 0 || label >= gmm.num_classes())
    throw std::out_of_range("clean_prob: class index " + std::to_string(label) + " out of range");
  return posterior(gmm, v)[label];
}

namespace {

double percentile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double log_normal(double x, double mean, double variance) {
  const double diff = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + diff * diff / variance);
}

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

double binary_log_likelihood(const BinaryGmm& bg, std::span<const double> values) {
  double total = 0.0;
  for (double x : values) {
    const double l0 = std::log(bg.weights[0]) + log_normal(x, bg.means[0], bg.variances[0]);
    const double l1 = std::log(bg.weights[1]) + log_normal(x, bg.means[1], bg.variances[1]);
    total += log_sum_exp2(l0, l1);
  }
  return total;
}

BinaryGmm fit_binary_gmm(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("fit_binary_gmm: need at least two values");
  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  if (*min_it == *max_it) throw DegenerateError("fit_binary_gmm: all values are equal");

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  var = std::max(var / static_cast<double>(n), kBinaryVarianceFloor);

  BinaryGmm bg;
  bg.means = {percentile(sorted, 0.1), percentile(sorted, 0.9)};
  bg.variances = {var, var};
  bg.weights = {0.5, 0.5};

  std::vector<double> resp(n);  // responsibility of component 1
  for (int iter = 0; iter < kBinaryMaxIterations; ++iter) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l0 = std::log(bg.weights[0]) + log_normal(values[i], bg.means[0], bg.variances[0]);
      const double l1 = std::log(bg.weights[1]) + log_normal(values[i], bg.means[1], bg.variances[1]);
      const double total = log_sum_exp2(l0, l1);
      ll += total;
      resp[i] = std::exp(l1 - total);
    }
    bg.log_likelihood.push_back(ll);

    std::array<double, 2> mass{0.0, 0.0}, sum{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      mass[0] += 1.0 - resp[i];
      mass[1] += resp[i];
      sum[0] += (1.0 - resp[i]) * values[i];
      sum[1] += resp[i] * values[i];
    }
    const auto old_means = bg.means;
    for (int c = 0; c < 2; ++c) {
      bg.weights[c] = mass[c] / static_cast<double>(n);
      if (mass[c] <= 0.0) continue;  // collapsed component keeps its location
      bg.means[c] = sum[c] / mass[c];
      double scatter = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = c == 1 ? resp[i] : 1.0 - resp[i];
        scatter += r * (values[i] - bg.means[c]) * (values[i] - bg.means[c]);
      }
      bg.variances[c] = std::max(scatter / mass[c], kBinaryVarianceFloor);
    }
    bg.iterations = iter + 1;
    const double shift = std::max(std::abs(bg.means[0] - old_means[0]), std::abs(bg.means[1] - old_means[1]));
    if (shift < kBinaryTolerance) break;
  }
  bg.log_likelihood.push_back(binary_log_likelihood(bg, values));
  bg.clean_component = bg.means[1] > bg.means[0] ? 1 : 0;
  return bg;
}

double clean_posterior(const BinaryGmm& bg, double value) {
  const int clean = bg.clean_component;
  const int noisy = 1 - clean;
  const double l_clean = std::log(bg.weights[clean]) + log_normal(value, bg.means[clean], bg.variances[clean]);
  const double l_noisy = std::log(bg.weights[noisy]) + log_normal(value, bg.means[noisy], bg.variances[noisy]);
  if (l_clean == -std::numeric_limits<double>::infinity()) return 0.0;
  return 1.0 / (1.0 + std::exp(l_noisy - l_clean));
}

void write_gmm(std::ostream& out, const GmmState& gmm) {
  for (Eigen::Index k = 0; k < gmm.means.cols(); ++k) {
    out << k << ',' << text::format_double(gmm.variances[k]);
    for (Eigen::Index r = 0; r < gmm.means.rows(); ++r) out << ',' << text::format_double(gmm.means(r, k));
    out << '\n';
  }
}

GmmState read_gmm(std::istream& in) {
  std::vector<std::pair<double, Vector>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    if (fields.size() < 3) throw std::runtime_error("gmm: line needs k, sigma and at least one mean coordinate");
    if (text::parse_int(fields[0]) != static_cast<long long>(rows.size()))
      throw std::runtime_error("gmm: class indices must be consecutive from 0");
    Vector mu(static_cast<Eigen::Index>(fields.size() - 2));
    for (std::size_t i = 2; i < fields.size(); ++i) mu[static_cast<Eigen::Index>(i - 2)] = text::parse_double(fields[i]);
    if (!rows.empty() && mu.size() != rows.front().second.size())
      throw std::runtime_error("gmm: inconsistent mean dimension");
    rows.emplace_back(text::parse_double(fields[1]), std::move(mu));
  }
  GmmState gmm;
  if (rows.empty()) return gmm;
  gmm.means.resize(rows.front().second.size(), static_cast<Eigen::Index>(rows.size()));
  gmm.variances.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    gmm.variances[static_cast<Eigen::Index>(k)] = rows[k].first;
    gmm.means.col(static_cast<Eigen::Index>(k)) = rows[k].second;
  }
  return gmm;
}

}  // namespace tcl
