#include "tcl/model.hpp"

#include "tcl/text_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace tcl {

namespace {

constexpr double kNormEpsilon = 1e-12;

DenseLayer make_layer(Eigen::Index out, Eigen::Index in, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  DenseLayer layer;
  layer.weight.resize(out, in);
  for (Eigen::Index c = 0; c < in; ++c)
    for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = normal(rng);
  layer.bias = Vector::Zero(out);
  return layer;
}

Matrix affine(const DenseLayer& layer, const Matrix& in) {
  Matrix out = layer.weight * in;
  out.colwise() += layer.bias;
  return out;
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

void accumulate_dense(const DenseLayer& layer, const Matrix& layer_in, const Matrix& d_out, DenseLayer& grad,
                      Matrix* d_in) {
  grad.weight.noalias() += d_out * layer_in.transpose();
  grad.bias += d_out.rowwise().sum();
  if (d_in != nullptr) *d_in = layer.weight.transpose() * d_out;
}

}  // namespace

ModelShape ModelParams::shape() const {
  ModelShape s;
  s.input_dim = trunk.empty() ? 0 : static_cast<int>(trunk.front().in_dim());
  s.hidden_dim = trunk.empty() ? 0 : static_cast<int>(trunk.front().out_dim());
  s.embedding_dim = static_cast<int>(head_f[1].out_dim());
  s.num_classes = static_cast<int>(head_g[1].out_dim());
  s.trunk_layers = static_cast<int>(trunk.size());
  return s;
}

std::vector<DenseLayer*> ModelParams::layers() {
  std::vector<DenseLayer*> out;
  for (auto& l : trunk) out.push_back(&l);
  for (auto& l : head_f) out.push_back(&l);
  for (auto& l : head_g) out.push_back(&l);
  return out;
}

std::vector<const DenseLayer*> ModelParams::layers() const {
  std::vector<const DenseLayer*> out;
  for (const auto& l : trunk) out.push_back(&l);
  for (const auto& l : head_f) out.push_back(&l);
  for (const auto& l : head_g) out.push_back(&l);
  return out;
}

std::vector<std::string> ModelParams::layer_names(int trunk_layers) {
  std::vector<std::string> names;
  for (int i = 0; i < trunk_layers; ++i) names.push_back("trunk." + std::to_string(i));
  names.insert(names.end(), {"head_f.0", "head_f.1", "head_g.0", "head_g.1"});
  return names;
}

bool ModelParams::all_finite() const {
  for (const auto* l : layers())
    if (!l->weight.allFinite() || !l->bias.allFinite()) return false;
  return true;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  auto la = a.layers();
  auto lb = b.layers();
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (la[i]->weight.rows() != lb[i]->weight.rows() || la[i]->weight.cols() != lb[i]->weight.cols()) return false;
    if (la[i]->weight != lb[i]->weight || la[i]->bias != lb[i]->bias) return false;
  }
  return true;
}

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  require(shape.input_dim >= 1, "init_params: input_dim must be positive");
  require(shape.hidden_dim >= 1, "init_params: hidden_dim must be positive");
  require(shape.embedding_dim >= 2, "init_params: embedding_dim must be >= 2");
  require(shape.num_classes >= 2, "init_params: num_classes must be >= 2");
  require(shape.trunk_layers >= 1, "init_params: trunk needs at least one layer");

  std::mt19937_64 rng(seed);
  const auto he = [](Eigen::Index fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  const auto lecun = [](Eigen::Index fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };

  ModelParams p;
  Eigen::Index in = shape.input_dim;
  for (int i = 0; i < shape.trunk_layers; ++i) {
    p.trunk.push_back(make_layer(shape.hidden_dim, in, he(in), rng));
    in = shape.hidden_dim;
  }
  p.head_f[0] = make_layer(shape.hidden_dim, shape.hidden_dim, he(shape.hidden_dim), rng);
  p.head_f[1] = make_layer(shape.embedding_dim, shape.hidden_dim, lecun(shape.hidden_dim), rng);
  p.head_g[0] = make_layer(shape.hidden_dim, shape.hidden_dim, he(shape.hidden_dim), rng);
  p.head_g[1] = make_layer(shape.num_classes, shape.hidden_dim, 0.01 * lecun(shape.hidden_dim), rng);
  return p;
}

Gradients zeros_like(const ModelParams& params) {
  Gradients g = params;
  for (auto* l : g.layers()) {
    l->weight.setZero();
    l->bias.setZero();
  }
  return g;
}

void axpy(double scale, const ModelParams& other, ModelParams& target) {
  auto src = other.layers();
  auto dst = target.layers();
  if (src.size() != dst.size()) throw ShapeError("axpy: layer count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->weight.rows() != dst[i]->weight.rows() || src[i]->weight.cols() != dst[i]->weight.cols())
      throw ShapeError("axpy: layer shape mismatch");
    dst[i]->weight += scale * src[i]->weight;
    dst[i]->bias += scale * src[i]->bias;
  }
}

ForwardResult forward(const ModelParams& params, const Matrix& inputs) {
  const auto shape = params.shape();
  if (inputs.rows() != shape.input_dim)
    throw ShapeError("forward: input has dimension " + std::to_string(inputs.rows()) + ", model expects " +
                     std::to_string(shape.input_dim));

  ForwardResult r;
  auto& c = r.cache;
  c.input = inputs;
  const Matrix* h = &c.input;
  for (const auto& layer : params.trunk) {
    c.trunk_pre.push_back(affine(layer, *h));
    c.trunk_out.push_back(relu(c.trunk_pre.back()));
    h = &c.trunk_out.back();
  }

  c.f_pre = affine(params.head_f[0], *h);
  c.f_hidden = relu(c.f_pre);
  c.f_raw = affine(params.head_f[1], c.f_hidden);
  c.f_norm = c.f_raw.colwise().norm().transpose();
  r.embeddings.resize(c.f_raw.rows(), c.f_raw.cols());
  for (Eigen::Index j = 0; j < c.f_raw.cols(); ++j) {
    if (c.f_norm[j] >= kNormEpsilon) {
      r.embeddings.col(j) = c.f_raw.col(j) / c.f_norm[j];
    } else {
      // Degenerate direction: fall back to the first basis vector (zero gradient).
      r.embeddings.col(j).setZero();
      r.embeddings(0, j) = 1.0;
    }
  }

  c.g_pre = affine(params.head_g[0], *h);
  c.g_hidden = relu(c.g_pre);
  c.logits = affine(params.head_g[1], c.g_hidden);
  r.probs.resize(c.logits.rows(), c.logits.cols());
  for (Eigen::Index j = 0; j < c.logits.cols(); ++j) {
    Vector e = (c.logits.col(j).array() - c.logits.col(j).maxCoeff()).exp();
    r.probs.col(j) = e / e.sum();
  }
  return r;
}

ForwardResult forward(const ModelParams& params, const Vector& x) { return forward(params, Matrix(x)); }

Gradients backward(const ModelParams& params, const ForwardResult& fwd, const OutputGradients& upstream,
                   double loss) {
  if (!std::isfinite(loss)) throw NonFiniteError("backward: loss is not finite");
  const auto& c = fwd.cache;
  const Eigen::Index batch = c.input.cols();
  Gradients g = zeros_like(params);
  const Matrix& trunk_top = c.trunk_out.back();
  Matrix d_trunk = Matrix::Zero(trunk_top.rows(), batch);

  if (upstream.d_probs.size() != 0) {
    if (upstream.d_probs.rows() != fwd.probs.rows() || upstream.d_probs.cols() != batch)
      throw ShapeError("backward: d_probs shape mismatch");
    // Softmax Jacobian-vector product, column by column.
    const Eigen::RowVectorXd inner = (fwd.probs.array() * upstream.d_probs.array()).colwise().sum();
    Matrix d_logits = fwd.probs.array() * (upstream.d_probs.rowwise() - inner).array();
    Matrix d_hidden;
    accumulate_dense(params.head_g[1], c.g_hidden, d_logits, g.head_g[1], &d_hidden);
    Matrix d_pre = d_hidden.cwiseProduct(relu_mask(c.g_pre));
    Matrix d_in;
    accumulate_dense(params.head_g[0], trunk_top, d_pre, g.head_g[0], &d_in);
    d_trunk += d_in;
  }

  if (upstream.d_embeddings.size() != 0) {
    if (upstream.d_embeddings.rows() != fwd.embeddings.rows() || upstream.d_embeddings.cols() != batch)
      throw ShapeError("backward: d_embeddings shape mismatch");
    Matrix d_raw = Matrix::Zero(c.f_raw.rows(), batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      if (c.f_norm[j] < kNormEpsilon) continue;
      const auto v = fwd.embeddings.col(j);
      const auto dv = upstream.d_embeddings.col(j);
      d_raw.col(j) = (dv - v * v.dot(dv)) / c.f_norm[j];
    }
    Matrix d_hidden;
    accumulate_dense(params.head_f[1], c.f_hidden, d_raw, g.head_f[1], &d_hidden);
    Matrix d_pre = d_hidden.cwiseProduct(relu_mask(c.f_pre));
    Matrix d_in;
    accumulate_dense(params.head_f[0], trunk_top, d_pre, g.head_f[0], &d_in);
    d_trunk += d_in;
  }

  for (std::size_t i = params.trunk.size(); i-- > 0;) {
    Matrix d_pre = d_trunk.cwiseProduct(relu_mask(c.trunk_pre[i]));
    const Matrix& layer_in = i == 0 ? c.input : c.trunk_out[i - 1];
    Matrix d_in;
    accumulate_dense(params.trunk[i], layer_in, d_pre, g.trunk[i], i == 0 ? nullptr : &d_in);
    if (i > 0) d_trunk = std::move(d_in);
  }
  return g;
}

OptimizerState make_optimizer(const ModelParams& params, double momentum, double weight_decay, double base_lr,
                              int warmup_epochs, int total_epochs) {
  require(momentum >= 0.0 && momentum < 1.0, "optimizer: momentum must lie in [0, 1)");
  require(weight_decay >= 0.0 && weight_decay < 1.0, "optimizer: weight decay must lie in [0, 1)");
  require(base_lr >= 0.0, "optimizer: learning rate must be nonnegative");
  require(warmup_epochs >= 0, "optimizer: warmup epochs must be nonnegative");
  OptimizerState opt;
  opt.momentum_buffer = zeros_like(params);
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  opt.base_lr = base_lr;
  opt.warmup_epochs = warmup_epochs;
  opt.total_epochs = total_epochs;
  return opt;
}

void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& opt, double lr) {
  auto p = params.layers();
  auto g = grads.layers();
  auto b = opt.momentum_buffer.layers();
  if (p.size() != g.size() || p.size() != b.size()) throw ShapeError("sgd_step: layer count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->weight.rows() != g[i]->weight.rows() || p[i]->weight.cols() != g[i]->weight.cols() ||
        p[i]->bias.size() != g[i]->bias.size() || b[i]->weight.rows() != p[i]->weight.rows() ||
        b[i]->weight.cols() != p[i]->weight.cols())
      throw ShapeError("sgd_step: shape mismatch in layer " + std::to_string(i));
    b[i]->weight = opt.momentum * b[i]->weight + g[i]->weight + opt.weight_decay * p[i]->weight;
    b[i]->bias = opt.momentum * b[i]->bias + g[i]->bias + opt.weight_decay * p[i]->bias;
    p[i]->weight -= lr * b[i]->weight;
    p[i]->bias -= lr * b[i]->bias;
  }
}

double lr_schedule(int epoch, const OptimizerState& opt) {
  if (epoch < 0 || epoch >= opt.total_epochs)
    throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(opt.total_epochs) + ")");
  if (epoch < opt.warmup_epochs)
    return opt.base_lr * static_cast<double>(epoch) / static_cast<double>(opt.warmup_epochs);
  const double span = static_cast<double>(opt.total_epochs - opt.warmup_epochs);
  const double progress = static_cast<double>(epoch - opt.warmup_epochs) / span;
  return opt.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Layout: magic line, shape line, then per layer a `layer <name> <rows> <cols>` header followed by
// the weight rows, one per line, and one line of biases. Values use shortest round-trip decimals.
void write_checkpoint(std::ostream& out, const ModelParams& params) {
  const auto s = params.shape();
  out << "tcl-checkpoint v1\n";
  out << "input_dim=" << s.input_dim << " hidden_dim=" << s.hidden_dim << " embedding_dim=" << s.embedding_dim
      << " num_classes=" << s.num_classes << " trunk_layers=" << s.trunk_layers << '\n';
  const auto names = ModelParams::layer_names(s.trunk_layers);
  const auto layers = params.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = *layers[i];
    out << "layer " << names[i] << ' ' << l.weight.rows() << ' ' << l.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out << (c ? " " : "") << text::format_double(l.weight(r, c));
      out << '\n';
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out << (r ? " " : "") << text::format_double(l.bias[r]);
    out << '\n';
  }
}

namespace {

std::vector<double> parse_row(const std::string& line, Eigen::Index expected) {
  std::vector<double> values;
  for (auto tok : text::split(text::trim(line), ' '))
    if (!tok.empty()) values.push_back(text::parse_double(tok));
  if (static_cast<Eigen::Index>(values.size()) != expected)
    throw std::runtime_error("checkpoint: expected " + std::to_string(expected) + " values, found " +
                             std::to_string(values.size()));
  return values;
}

}  // namespace

ModelParams read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "tcl-checkpoint v1")
    throw std::runtime_error("checkpoint: bad magic line");
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: missing shape line");
  ModelShape shape;
  for (auto tok : text::split(text::trim(line), ' ')) {
    auto eq = tok.find('=');
    if (eq == std::string_view::npos) throw std::runtime_error("checkpoint: malformed shape token");
    auto key = tok.substr(0, eq);
    int value = static_cast<int>(text::parse_int(tok.substr(eq + 1)));
    if (key == "input_dim") shape.input_dim = value;
    else if (key == "hidden_dim") shape.hidden_dim = value;
    else if (key == "embedding_dim") shape.embedding_dim = value;
    else if (key == "num_classes") shape.num_classes = value;
    else if (key == "trunk_layers") shape.trunk_layers = value;
    else throw std::runtime_error("checkpoint: unknown shape key");
  }
  ModelParams p = init_params(shape, 0);
  const auto names = ModelParams::layer_names(shape.trunk_layers);
  auto layers = p.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated before layer " + names[i]);
    std::istringstream header(line);
    std::string tag, name;
    Eigen::Index rows = 0, cols = 0;
    header >> tag >> name >> rows >> cols;
    auto& l = *layers[i];
    if (tag != "layer" || name != names[i] || rows != l.weight.rows() || cols != l.weight.cols())
      throw std::runtime_error("checkpoint: unexpected layer header '" + line + "'");
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated weights in " + name);
      auto row = parse_row(line, cols);
      for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = row[static_cast<std::size_t>(c)];
    }
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated bias in " + name);
    auto bias = parse_row(line, rows);
    for (Eigen::Index r = 0; r < rows; ++r) l.bias[r] = bias[static_cast<std::size_t>(r)];
  }
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace tcl
