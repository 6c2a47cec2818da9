#include "oracles.hpp"

#include "tcl/eval.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace tcl;

TEST_CASE("accuracy arithmetic") {
  const std::vector<int> a{0, 1, 2, 3};
  CHECK(accuracy(a, a) == 1.0);
  CHECK(accuracy(a, std::vector<int>{1, 2, 3, 0}) == 0.0);
  CHECK(accuracy(a, std::vector<int>{0, 1, 2, 0}) == 0.75);
  CHECK_THROWS_AS(accuracy(a, std::vector<int>{0}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST_CASE("detection AUC fixtures") {
  std::vector<DetectionRecord> perfect{{0, 0.9, true}, {1, 0.8, true}, {2, 0.3, false}, {3, 0.1, false}};
  CHECK(detection_auc(perfect) == 1.0);
  std::vector<DetectionRecord> flat{{0, 0.5, true}, {1, 0.5, false}, {2, 0.5, true}};
  CHECK(detection_auc(flat) == 0.5);
  // Pairs: (0.9 vs 0.85) ranked right, (0.8 vs 0.85) ranked wrong.
  std::vector<DetectionRecord> mixed{{0, 0.9, true}, {1, 0.8, true}, {2, 0.85, false}};
  CHECK(detection_auc(mixed) == 0.5);
  CHECK(oracle::pairwise_auc(mixed) == 0.5);
  std::vector<DetectionRecord> one_class{{0, 0.9, true}, {1, 0.8, true}};
  CHECK_THROWS_AS(detection_auc(one_class), std::invalid_argument);
}

TEST_CASE("rank AUC equals the pairwise statistic and ignores record order") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 300);
    const int levels = 1 + static_cast<int>(rng() % 20);  // coarse grids force ties
    std::vector<DetectionRecord> records;
    for (int i = 0; i < n; ++i)
      records.push_back({i, static_cast<double>(rng() % static_cast<std::uint64_t>(levels)) / levels, rng() % 3 != 0});
    records[0].is_clean = true;
    records[1].is_clean = false;
    const double auc = detection_auc(records);
    CHECK(auc == oracle::pairwise_auc(records));
    std::shuffle(records.begin(), records.end(), rng);
    CHECK(detection_auc(records) == auc);
  }
}

TEST_CASE("k-NN self match and constant predictor") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  Matrix emb(3, 30);
  for (Eigen::Index j = 0; j < 30; ++j)
    for (Eigen::Index i = 0; i < 3; ++i) emb(i, j) = normal(rng);
  emb.colwise().normalize();
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i)] = i % 3;
  CHECK(knn_eval(emb, labels, emb, labels, 1) == 1.0);

  const std::vector<int> constant(30, 2);
  const std::vector<int> truths{2, 2, 0, 1, 2, 2, 0, 0, 2, 1};
  CHECK(knn_eval(emb, constant, emb.leftCols(10), truths, 5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(knn_eval(emb, labels, emb, labels, 0), std::out_of_range);
  CHECK_THROWS_AS(knn_eval(emb, labels, emb, labels, 31), std::out_of_range);
}

TEST_CASE("k-NN agrees with exhaustive neighbor search") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 60, q = 25;
    Matrix train(4, n), test(4, q);
    std::vector<int> labels;
    for (int j = 0; j < n; ++j) {
      const int c = j % 2;
      train.col(j) = Vector::Unit(4, c) * 3.0;
      for (int i = 0; i < 4; ++i) train(i, j) += normal(rng);
      labels.push_back(c);
    }
    for (int j = 0; j < q; ++j)
      for (int i = 0; i < 4; ++i) test(i, j) = normal(rng);
    train.colwise().normalize();
    test.colwise().normalize();
    for (int k : {1, 3, 4, 7}) CHECK(knn_predict(train, labels, test, k) == oracle::brute_knn(train, labels, test, k));
  }
}

TEST_CASE("k-NN vote ties go to the earliest neighbor's class") {
  Matrix train(2, 2);
  train << 1.0, 0.6, 0.0, 0.8;
  Matrix query(2, 1);
  query << 0.8, 0.6;
  // Column 1 is the nearer neighbor (similarity 0.96 against 0.8).
  const std::vector<int> labels{0, 1};
  CHECK(knn_predict(train, labels, query, 2) == std::vector<int>{1});
}

TEST_CASE("default k") {
  CHECK(default_knn_k(5) == 1);
  CHECK(default_knn_k(500) == 50);
  CHECK(default_knn_k(100000) == 200);
}

TEST_CASE("imbalance ratio") {
  CHECK(imbalance_ratio(std::vector<int>{0, 1, 2, 0, 1, 2}, 3) == 1.0);
  std::vector<int> skewed(30, 0);
  skewed.insert(skewed.end(), 10, 1);
  CHECK(imbalance_ratio(skewed, 2) == 3.0);
  CHECK_THROWS(imbalance_ratio(std::vector<int>{0, 0}, 2));
}

TEST_CASE("histogram puts a score of one in the last bin") {
  std::vector<DetectionRecord> ones;
  for (int i = 0; i < 7; ++i) ones.push_back({i, 1.0, i % 2 == 0});
  const auto bins = clean_histogram(ones, 10);
  REQUIRE(bins.size() == 10);
  for (std::size_t b = 0; b < 9; ++b) CHECK(bins[b].clean + bins[b].noisy == 0);
  CHECK(bins[9].clean == 4);
  CHECK(bins[9].noisy == 3);
  CHECK(bins[9].hi == 1.0);
}

TEST_CASE("uniform scores fill bins evenly") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<DetectionRecord> records;
  for (int i = 0; i < 100000; ++i) records.push_back({i, unit(rng), i % 3 != 0});
  std::size_t total = 0;
  for (const auto& bin : clean_histogram(records, 10)) {
    const double count = static_cast<double>(bin.clean + bin.noisy);
    CHECK(std::abs(count - 10000.0) < 500.0);
    total += bin.clean + bin.noisy;
  }
  CHECK(total == 100000);
}

TEST_CASE("histogram export format") {
  std::vector<DetectionRecord> records{{0, 0.1, true}, {1, 0.6, false}, {2, 0.7, true}};
  std::ostringstream out;
  export_clean_histogram(out, records, 2);
  CHECK(out.str() == "bin_lo,bin_hi,count_clean,count_noisy\n0,0.5,1,0\n0.5,1,1,1\n");
  CHECK_THROWS(clean_histogram(records, 0));
}
