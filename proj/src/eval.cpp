#include "tcl/eval.hpp"

#include "tcl/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

namespace tcl {

double accuracy(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double detection_auc(std::span<const DetectionRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return records[a].score < records[b].score; });

  // Sum of (1-based, tie-averaged) ranks of the clean records. Ranks are half-integers, exact in double.
  double clean_rank_sum = 0.0;
  std::size_t n_clean = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && records[order[j + 1]].score == records[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (records[order[t]].is_clean) {
        clean_rank_sum += mid_rank;
        ++n_clean;
      }
    }
    i = j + 1;
  }
  const std::size_t n_noisy = records.size() - n_clean;
  if (n_clean == 0 || n_noisy == 0)
    throw std::invalid_argument("detection_auc: need at least one clean and one noisy record");
  const double nc = static_cast<double>(n_clean);
  const double u = clean_rank_sum - nc * (nc + 1.0) / 2.0;
  return u / (nc * static_cast<double>(n_noisy));
}

std::vector<int> knn_predict(const Matrix& train_embeddings, std::span<const int> train_labels,
                             const Matrix& test_embeddings, int k) {
  const auto n_train = static_cast<std::size_t>(train_embeddings.cols());
  if (train_labels.size() != n_train) throw std::invalid_argument("knn: one label per training embedding required");
  if (k < 1 || static_cast<std::size_t>(k) > n_train)
    throw std::out_of_range("knn: k=" + std::to_string(k) + " outside [1, " + std::to_string(n_train) + "]");
  if (train_embeddings.rows() != test_embeddings.rows()) throw ShapeError("knn: embedding dimension mismatch");

  const int num_classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
  const Matrix sims = train_embeddings.transpose() * test_embeddings;
  std::vector<int> predictions(static_cast<std::size_t>(test_embeddings.cols()));
  std::vector<std::size_t> idx(n_train);
  std::vector<int> votes(static_cast<std::size_t>(num_classes));
  std::vector<std::size_t> first_seen(static_cast<std::size_t>(num_classes));

  for (Eigen::Index q = 0; q < test_embeddings.cols(); ++q) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto col = sims.col(q);
    auto closer = [&](std::size_t a, std::size_t b) {
      const double sa = col[static_cast<Eigen::Index>(a)];
      const double sb = col[static_cast<Eigen::Index>(b)];
      return sa != sb ? sa > sb : a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), closer);
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(first_seen.begin(), first_seen.end(), n_train);
    for (int r = 0; r < k; ++r) {
      const auto label = static_cast<std::size_t>(train_labels[idx[static_cast<std::size_t>(r)]]);
      ++votes[label];
      first_seen[label] = std::min(first_seen[label], static_cast<std::size_t>(r));
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      const auto ub = static_cast<std::size_t>(best);
      if (votes[uc] > votes[ub] || (votes[uc] == votes[ub] && first_seen[uc] < first_seen[ub])) best = c;
    }
    predictions[static_cast<std::size_t>(q)] = best;
  }
  return predictions;
}

double knn_eval(const Matrix& train_embeddings, std::span<const int> train_labels, const Matrix& test_embeddings,
                std::span<const int> test_labels, int k) {
  if (test_labels.size() != static_cast<std::size_t>(test_embeddings.cols()))
    throw std::invalid_argument("knn: one label per test embedding required");
  const auto predictions = knn_predict(train_embeddings, train_labels, test_embeddings, k);
  return accuracy(predictions, test_labels);
}

int default_knn_k(std::size_t train_size) {
  return static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(200, train_size / 10)));
}

double imbalance_ratio(std::span<const int> labels, int num_classes) {
  require(num_classes >= 1, "imbalance_ratio: K must be positive");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::out_of_range("imbalance_ratio: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*lo == 0) throw std::invalid_argument("imbalance_ratio: class " + std::to_string(lo - counts.begin()) + " is missing");
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<HistogramBin> clean_histogram(std::span<const DetectionRecord> records, int bins) {
  require(bins >= 2, "clean_histogram: need at least two bins");
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].lo = static_cast<double>(b) / bins;
    out[static_cast<std::size_t>(b)].hi = static_cast<double>(b + 1) / bins;
  }
  for (const auto& r : records) {
    const double s = std::clamp(r.score, 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(std::floor(s * bins)), out.size() - 1);
    (r.is_clean ? out[b].clean : out[b].noisy) += 1;
  }
  return out;
}

void export_clean_histogram(std::ostream& out, std::span<const DetectionRecord> records, int bins) {
  out << "bin_lo,bin_hi,count_clean,count_noisy\n";
  for (const auto& b : clean_histogram(records, bins))
    out << text::format_double(b.lo) << ',' << text::format_double(b.hi) << ',' << b.clean << ',' << b.noisy << '\n';
}

}  // namespace tcl
