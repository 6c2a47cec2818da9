#include "tcl/data.hpp"

#include "tcl/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

namespace tcl {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kSymmetric: return "sym";
    case NoiseKind::kAsymmetric: return "asym";
  }
  return "none";
}

NoiseKind parse_noise_kind(const std::string& text) {
  if (text == "none") return NoiseKind::kNone;
  if (text == "sym" || text == "symmetric") return NoiseKind::kSymmetric;
  if (text == "asym" || text == "asymmetric") return NoiseKind::kAsymmetric;
  throw std::invalid_argument("unknown noise kind '" + text + "' (expected none|sym|asym)");
}

bool operator==(const LabeledSample& a, const LabeledSample& b) {
  return a.sample_id == b.sample_id && a.true_label == b.true_label &&
         a.noisy_label == b.noisy_label && a.features.size() == b.features.size() &&
         a.features == b.features;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.num_classes == b.num_classes && a.samples == b.samples;
}

Matrix Dataset::feature_matrix() const {
  Matrix x(dim(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = samples[i].features;
  return x;
}

std::vector<int> Dataset::noisy_labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.noisy_label);
  return out;
}

std::vector<int> Dataset::true_labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.true_label);
  return out;
}

double Dataset::realized_noise() const {
  if (samples.empty()) return 0.0;
  auto flipped = std::count_if(samples.begin(), samples.end(), [](const auto& s) { return !s.is_clean(); });
  return static_cast<double>(flipped) / static_cast<double>(samples.size());
}

namespace {

Vector gaussian_vector(int dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

// K <= d: a random orthonormal frame scaled so every pair sits exactly `separation` apart.
// K > d: rejection sampling inside a ball that grows until all centers fit.
std::vector<Vector> draw_centers(int num_classes, int dim, double separation, Rng& rng) {
  std::vector<Vector> centers;
  if (num_classes <= dim) {
    for (int k = 0; k < num_classes; ++k) {
      Vector v;
      do {
        v = gaussian_vector(dim, rng);
        for (const auto& c : centers) v -= c.dot(v) * c;
      } while (v.norm() < 1e-6);
      centers.push_back(v.normalized());
    }
    for (auto& c : centers) c *= separation / std::sqrt(2.0);
    return centers;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double radius = separation * std::pow(static_cast<double>(num_classes), 1.0 / dim);
  int failures = 0;
  while (static_cast<int>(centers.size()) < num_classes) {
    Vector dir = gaussian_vector(dim, rng).normalized();
    Vector candidate = dir * radius * std::pow(unit(rng), 1.0 / dim);
    bool ok = std::all_of(centers.begin(), centers.end(),
                          [&](const Vector& c) { return (c - candidate).norm() >= separation; });
    if (ok) {
      centers.push_back(candidate);
      failures = 0;
    } else if (++failures > 1000) {
      radius *= 1.2;
      failures = 0;
    }
  }
  return centers;
}

}  // namespace

Dataset generate_blobs(int n, int num_classes, int dim, double separation, std::uint64_t seed) {
  require(num_classes >= 1, "generate_blobs: K must be positive");
  require(n >= num_classes, "generate_blobs: n must be >= K");
  require(dim >= 2, "generate_blobs: d must be >= 2");
  require(separation > 0.0, "generate_blobs: separation must be positive");

  Rng rng(seed);
  auto centers = draw_centers(num_classes, dim, separation, rng);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    LabeledSample s;
    s.true_label = i % num_classes;
    s.noisy_label = s.true_label;
    s.sample_id = i;
    s.features = centers[static_cast<std::size_t>(s.true_label)] + gaussian_vector(dim, rng);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

BlobSplit generate_blob_split(int n_train, int n_test, int num_classes, int dim, double separation,
                              std::uint64_t seed) {
  require(n_test >= 0, "generate_blob_split: n_test must be nonnegative");
  require(n_train >= num_classes, "generate_blob_split: n_train must be >= K");
  Dataset all = generate_blobs(n_train + n_test, num_classes, dim, separation, seed);
  BlobSplit split;
  split.train.num_classes = split.test.num_classes = num_classes;
  split.train.samples.assign(all.samples.begin(), all.samples.begin() + n_train);
  split.test.samples.assign(all.samples.begin() + n_train, all.samples.end());
  return split;
}

Dataset inject_noise(const Dataset& ds, NoiseKind kind, double ratio, std::uint64_t seed) {
  require(ratio >= 0.0 && ratio < 1.0, "inject_noise: ratio must lie in [0, 1)");
  Dataset out = ds;
  out.noise_kind = kind;
  out.noise_ratio = ratio;
  if (kind == NoiseKind::kNone || ratio == 0.0) {
    out.noise_kind = NoiseKind::kNone;
    out.noise_ratio = 0.0;
    return out;
  }
  require(ds.num_classes >= 2, "inject_noise: label noise needs at least two classes");

  const std::size_t n = ds.samples.size();
  // The epsilon absorbs products such as 0.7 * 2000 landing just below an integer.
  const auto flips = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_int_distribution<int> other(0, ds.num_classes - 2);
  for (std::size_t i = 0; i < flips; ++i) {
    auto& s = out.samples[order[i]];
    if (kind == NoiseKind::kSymmetric) {
      int r = other(rng);
      s.noisy_label = r >= s.true_label ? r + 1 : r;
    } else {
      s.noisy_label = (s.true_label + 1) % ds.num_classes;
    }
  }
  return out;
}

Vector augment(const Vector& x, double strength, Rng& rng) {
  require(strength >= 0.0, "augment: strength must be nonnegative");
  if (strength == 0.0) return x;
  std::normal_distribution<double> jitter(0.0, strength);
  std::uniform_real_distribution<double> scale(1.0 - strength, 1.0 + strength);
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i] * scale(rng) + jitter(rng);
  return out;
}

Vector augment_weak(const Vector& x, double strength, Rng& rng) {
  require(strength >= 0.0, "augment_weak: strength must be nonnegative");
  if (strength == 0.0) return x;
  std::normal_distribution<double> jitter(0.0, strength);
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i] + jitter(rng);
  return out;
}

MixedPair mixup_pair(const Vector& x_i, const Vector& t_i, const Vector& x_j, const Vector& t_j,
                     double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, "mixup_pair: lambda must lie in [0, 1]");
  if (x_i.size() != x_j.size() || t_i.size() != t_j.size())
    throw ShapeError("mixup_pair: operand dimensions differ");
  return {lambda * x_i + (1.0 - lambda) * x_j, lambda * t_i + (1.0 - lambda) * t_j};
}

double sample_beta(double alpha, Rng& rng) {
  require(alpha > 0.0, "sample_beta: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b <= 0.0) return 0.5;
  return a / (a + b);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  out << "d=" << ds.dim() << " K=" << ds.num_classes << " n=" << ds.size() << '\n';
  for (const auto& s : ds.samples) {
    out << s.sample_id << ',' << s.true_label << ',' << s.noisy_label;
    for (Eigen::Index i = 0; i < s.features.size(); ++i) out << ',' << text::format_double(s.features[i]);
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: missing header line");
  long long d = -1, k = -1, n = -1;
  for (auto tok : text::split(text::trim(line), ' ')) {
    if (tok.empty()) continue;
    auto eq = tok.find('=');
    if (eq == std::string_view::npos) throw std::runtime_error("dataset: malformed header token");
    auto key = tok.substr(0, eq);
    auto value = text::parse_int(tok.substr(eq + 1));
    if (key == "d") d = value;
    else if (key == "K") k = value;
    else if (key == "n") n = value;
    else throw std::runtime_error("dataset: unknown header key '" + std::string(key) + "'");
  }
  if (d < 0 || k < 1 || n < 0) throw std::runtime_error("dataset: header must define d, K and n");

  Dataset ds;
  ds.num_classes = static_cast<int>(k);
  ds.samples.reserve(static_cast<std::size_t>(n));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, ',');
    if (static_cast<long long>(fields.size()) != d + 3)
      throw std::runtime_error("dataset: line " + std::to_string(line_no) + " has " +
                               std::to_string(fields.size()) + " fields, expected " + std::to_string(d + 3));
    LabeledSample s;
    s.sample_id = text::parse_int(fields[0]);
    s.true_label = static_cast<int>(text::parse_int(fields[1]));
    s.noisy_label = static_cast<int>(text::parse_int(fields[2]));
    if (s.true_label < 0 || s.true_label >= k || s.noisy_label < 0 || s.noisy_label >= k)
      throw std::runtime_error("dataset: label out of range on line " + std::to_string(line_no));
    s.features.resize(d);
    for (long long i = 0; i < d; ++i) s.features[i] = text::parse_double(fields[static_cast<std::size_t>(i + 3)]);
    if (!s.features.allFinite()) throw std::runtime_error("dataset: non-finite feature on line " + std::to_string(line_no));
    ds.samples.push_back(std::move(s));
  }
  if (static_cast<long long>(ds.samples.size()) != n)
    throw std::runtime_error("dataset: header declares n=" + std::to_string(n) + " but file has " +
                             std::to_string(ds.samples.size()) + " records");
  const double noise = ds.realized_noise();
  ds.noise_ratio = noise;
  ds.noise_kind = noise > 0.0 ? NoiseKind::kSymmetric : NoiseKind::kNone;
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

}  // namespace tcl
