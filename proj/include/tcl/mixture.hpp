#pragma once

#include "tcl/common.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

namespace tcl {

inline constexpr double kGmmVarianceFloor = 1e-8;
inline constexpr double kGmmEmptyClassMass = 1e-8;
inline constexpr double kBinaryVarianceFloor = 1e-6;
inline constexpr int kBinaryMaxIterations = 100;
inline constexpr double kBinaryTolerance = 1e-6;

/// Spherical mixture over unit embeddings with a uniform prior over K components.
struct GmmState {
  Matrix means;      // e x K, unit columns
  Vector variances;  // K, strictly positive

  int num_classes() const { return static_cast<int>(means.cols()); }
  int dim() const { return static_cast<int>(means.rows()); }
};

/// M-step driven by classifier predictions instead of unsupervised responsibilities:
///   mu_k    = normalize(sum_i p_ik v_i / sum_i p_ik)
///   sigma_k = sum_i p_ik |v_i - mu_k|^2 / sum_i p_ik        (floored at kGmmVarianceFloor)
/// A class whose total mass is below kGmmEmptyClassMass keeps its entry from `previous`;
/// without a previous state that is a DegenerateError.
GmmState update_gmm(const Matrix& embeddings, const Matrix& predictions, const GmmState* previous = nullptr);

/// gamma_k = softmax_k(v . mu_k / sigma_k)
Vector posterior(const GmmState& gmm, const Vector& v);
/// Column-wise posterior for an e x n batch; result is K x n.
Matrix posterior(const GmmState& gmm, const Matrix& embeddings);

/// Pull-back of an upstream derivative on gamma to the embedding; mixture parameters stay constant.
Vector posterior_vjp(const GmmState& gmm, const Vector& gamma, const Vector& d_gamma);

/// Probability that label `label` is the cluster the embedding belongs to.
double clean_prob(const GmmState& gmm, const Vector& v, int label);

/// Two-component 1-D Gaussian mixture fit to clean probabilities.
struct BinaryGmm {
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  int clean_component = 0;  // component with the larger mean
  int iterations = 0;
  /// Data log-likelihood before each M-step, plus the value at the returned parameters.
  std::vector<double> log_likelihood;
};

/// EM from a percentile initialization (10th/90th), variances at the sample variance, equal weights.
/// Stops once no mean moves by more than kBinaryTolerance or after kBinaryMaxIterations.
BinaryGmm fit_binary_gmm(std::span<const double> values);

/// Data log-likelihood of `values` under the mixture.
double binary_log_likelihood(const BinaryGmm& bg, std::span<const double> values);

/// Posterior of the clean component for one value.
double clean_posterior(const BinaryGmm& bg, double value);

/// Lines `k,sigma_k,mu_k[0],...,mu_k[e-1]`, one per class.
void write_gmm(std::ostream& out, const GmmState& gmm);
GmmState read_gmm(std::istream& in);

}  // namespace tcl
