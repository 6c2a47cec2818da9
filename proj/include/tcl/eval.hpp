#pragma once

#include "tcl/common.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace tcl {

struct DetectionRecord {
  std::int64_t sample_id = 0;
  double score = 0.0;  // clean probability or clean weight, in [0, 1]
  bool is_clean = true;
};

double accuracy(std::span<const int> predictions, std::span<const int> truths);

/// ROC AUC of score against is_clean via the Mann-Whitney rank statistic; a tied clean/noisy pair counts 1/2.
double detection_auc(std::span<const DetectionRecord> records);

/// Majority vote among the k most cosine-similar training embeddings. Vote ties go to the tied class
/// whose member appears first in similarity order; equal similarities order by training index.
std::vector<int> knn_predict(const Matrix& train_embeddings, std::span<const int> train_labels,
                             const Matrix& test_embeddings, int k);
double knn_eval(const Matrix& train_embeddings, std::span<const int> train_labels, const Matrix& test_embeddings,
                std::span<const int> test_labels, int k);

/// min(200, n / 10), at least 1.
int default_knn_k(std::size_t train_size);

/// max class count / min class count. Every class in [0, K) must occur.
double imbalance_ratio(std::span<const int> labels, int num_classes);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t clean = 0;
  std::size_t noisy = 0;
};

/// Equal-width bins over [0, 1]; a score of exactly 1 lands in the last bin.
std::vector<HistogramBin> clean_histogram(std::span<const DetectionRecord> records, int bins);
/// CSV `bin_lo,bin_hi,count_clean,count_noisy`.
void export_clean_histogram(std::ostream& out, std::span<const DetectionRecord> records, int bins);

}  // namespace tcl
