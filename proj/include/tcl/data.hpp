#pragma once

#include "tcl/common.hpp"

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace tcl {

using Rng = std::mt19937_64;

enum class NoiseKind { kNone, kSymmetric, kAsymmetric };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& text);

/// One training record. Class indices are zero-based: labels live in [0, K).
/// `true_label` is never read by training code, only by evaluation.
struct LabeledSample {
  Vector features;
  int noisy_label = 0;
  int true_label = 0;
  std::int64_t sample_id = 0;

  bool is_clean() const { return noisy_label == true_label; }
};

bool operator==(const LabeledSample& a, const LabeledSample& b);

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  NoiseKind noise_kind = NoiseKind::kNone;
  double noise_ratio = 0.0;

  std::size_t size() const { return samples.size(); }
  int dim() const { return samples.empty() ? 0 : static_cast<int>(samples.front().features.size()); }

  /// Column-major feature matrix (dim x n).
  Matrix feature_matrix() const;
  std::vector<int> noisy_labels() const;
  std::vector<int> true_labels() const;
  /// Fraction of samples whose noisy label differs from the true label.
  double realized_noise() const;
};

/// Record-level equality: samples and class count. Noise metadata is not persisted by the
/// text format, so it is not compared.
bool operator==(const Dataset& a, const Dataset& b);

/// The three inputs one sample contributes to a training step.
struct ViewTriple {
  Vector view1;
  Vector view2;
  Vector mix_view;
  double mix_lambda = 1.0;
  std::int64_t mix_partner = 0;
};

/// Isotropic unit-variance Gaussian clusters with pairwise center distance >= separation.
/// Sample i belongs to class i mod K, so class counts differ by at most one.
Dataset generate_blobs(int n, int num_classes, int dim, double separation, std::uint64_t seed);

/// Train/test pair drawn from one set of cluster centers. The test part stays clean.
struct BlobSplit {
  Dataset train;
  Dataset test;
};
BlobSplit generate_blob_split(int n_train, int n_test, int num_classes, int dim, double separation,
                              std::uint64_t seed);

/// Flips exactly floor(ratio * n) labels, chosen without replacement.
/// Symmetric noise draws a uniformly random other class; asymmetric maps k -> (k + 1) mod K.
Dataset inject_noise(const Dataset& ds, NoiseKind kind, double ratio, std::uint64_t seed);

/// Additive N(0, strength^2) jitter plus per-coordinate scaling in [1 - strength, 1 + strength].
Vector augment(const Vector& x, double strength, Rng& rng);

/// Jitter-only perturbation used for the mixup inputs.
Vector augment_weak(const Vector& x, double strength, Rng& rng);

struct MixedPair {
  Vector features;
  Vector target;
};

MixedPair mixup_pair(const Vector& x_i, const Vector& t_i, const Vector& x_j, const Vector& t_j,
                     double lambda);

/// Symmetric Beta(alpha, alpha) draw.
double sample_beta(double alpha, Rng& rng);

// Text format: header `d=<int> K=<int> n=<int>`, then `sample_id,true_label,noisy_label,f_1,...,f_d`.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace tcl
