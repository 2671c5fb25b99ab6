#include "ubct/embedding_model.hpp"

#include "ubct/errors.hpp"
#include "ubct/hashing.hpp"
#include "ubct/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

namespace ubct {
namespace {

constexpr std::array<char, 8> kModelMagic = {'U', 'B', 'C', 'T', 'M', 'D', 'L', '1'};
constexpr std::array<char, 8> kPrototypeMagic = {'U', 'B', 'C', 'T', 'P', 'R', 'O', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint");
  return v;
}

void put_doubles(std::ofstream& out, const double* p, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(sizeof(double) * n));
}

void get_doubles(std::ifstream& in, double* p, Eigen::Index n) {
  if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(sizeof(double) * n)))
    throw IoError("truncated checkpoint payload");
}

void check_magic(std::ifstream& in, const std::array<char, 8>& magic) {
  std::array<char, 8> got{};
  if (!in.read(got.data(), got.size()) || got != magic) throw IoError("bad checkpoint magic");
}

Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
  }
  return z;
}

/// Derivative of the activation, expressed through the pre-activation.
Matrix activation_slope(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - z.array().tanh().square()).matrix();
  }
  return Matrix::Ones(z.rows(), z.cols());
}

bool finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("activation", "unknown activation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim", "must be positive");
  if (hidden_dims.empty()) throw ConfigError("hidden_dims", "must be nonempty");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("hidden_dims", "entries must be positive");
  if (embed_dim < 2) throw ConfigError("embed_dim", "must be >= 2");
}

bool ModelGradients::all_finite() const {
  for (const auto& w : weight)
    if (!w.allFinite()) return false;
  for (const auto& b : bias)
    if (!b.allFinite()) return false;
  return true;
}

EmbeddingModel::EmbeddingModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.init_seed);
  std::vector<int> dims;
  dims.push_back(config_.input_dim);
  dims.insert(dims.end(), config_.hidden_dims.begin(), config_.hidden_dims.end());
  dims.push_back(config_.embed_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const bool hidden = l + 2 < dims.size();
    // He init ahead of ReLU, Xavier-style otherwise.
    const double gain = (hidden && config_.activation == Activation::Relu) ? 2.0 : 1.0;
    const double stddev = std::sqrt(gain / in);
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) layer.weight(i, j) = stddev * rng.normal();
    layers_.push_back(std::move(layer));
  }
}

ForwardPass EmbeddingModel::forward_train(const Matrix& inputs) const {
  if (inputs.cols() != config_.input_dim)
    throw ShapeError("model expects " + std::to_string(config_.input_dim) + " input columns, got " +
                     std::to_string(inputs.cols()));
  ForwardPass pass;
  Matrix h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    pass.layer_inputs.push_back(std::move(h));
    if (l + 1 < layers_.size()) {
      h = activate(z, config_.activation);
      pass.pre_activations.push_back(std::move(z));
    } else {
      h = std::move(z);
    }
  }
  pass.raw_norms = h.rowwise().norm();
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double n = pass.raw_norms[i];
    if (!(n > 1e-12) || !std::isfinite(n))
      throw NumericalError("embedding row " + std::to_string(i) + " has degenerate norm " +
                           std::to_string(n));
    h.row(i) /= n;
  }
  pass.features = std::move(h);
  return pass;
}

FeatureMatrix EmbeddingModel::forward(const Matrix& inputs) const {
  return forward_train(inputs).features;
}

ModelGradients EmbeddingModel::backward(const ForwardPass& pass,
                                        const Matrix& grad_features) const {
  const auto& f = pass.features;
  if (grad_features.rows() != f.rows() || grad_features.cols() != f.cols())
    throw ShapeError("feature gradient shape does not match forward pass");
  // d/dz of z/|z|: (g - y (y.g)) / |z|
  Matrix grad = grad_features;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const double proj = f.row(i).dot(grad_features.row(i));
    grad.row(i) = (grad_features.row(i) - proj * f.row(i)) / pass.raw_norms[i];
  }
  ModelGradients out;
  out.weight.resize(layers_.size());
  out.bias.resize(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      grad = grad.cwiseProduct(activation_slope(pass.pre_activations[l], config_.activation));
    }
    out.weight[l] = grad.transpose() * pass.layer_inputs[l];
    out.bias[l] = grad.colwise().sum().transpose();
    if (l > 0) grad = grad * layers_[l].weight;
  }
  return out;
}

std::uint64_t EmbeddingModel::parameter_hash() const {
  Fnv1a h;
  for (const auto& layer : layers_) {
    h.update(layer.weight);
    h.update(layer.bias);
  }
  return h.digest();
}

std::size_t EmbeddingModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_)
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

void EmbeddingModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kModelMagic.data(), kModelMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, config_.activation == Activation::Relu ? 0u : 1u);
  put<std::uint64_t>(out, config_.init_seed);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(config_.input_dim));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(config_.embed_dim));
  put<std::uint64_t>(out, layers_.size());
  for (const auto& layer : layers_) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.cols()));
    put_doubles(out, layer.weight.data(), layer.weight.size());
    put_doubles(out, layer.bias.data(), layer.bias.size());
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  check_magic(in, kModelMagic);
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  ModelConfig cfg;
  cfg.activation = get<std::uint32_t>(in) == 0 ? Activation::Relu : Activation::Tanh;
  cfg.init_seed = get<std::uint64_t>(in);
  cfg.input_dim = static_cast<int>(get<std::uint64_t>(in));
  cfg.embed_dim = static_cast<int>(get<std::uint64_t>(in));
  const auto count = get<std::uint64_t>(in);
  if (count < 2 || count > 1024) throw IoError("implausible layer count in checkpoint");
  std::vector<DenseLayer> layers;
  cfg.hidden_dims.clear();
  int expect_in = cfg.input_dim;
  for (std::uint64_t l = 0; l < count; ++l) {
    const auto out_dim = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    const auto in_dim = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    if (in_dim != expect_in || out_dim < 1 || out_dim > (1 << 20))
      throw IoError("inconsistent layer shapes in checkpoint");
    DenseLayer layer{Matrix(out_dim, in_dim), Vector(out_dim)};
    get_doubles(in, layer.weight.data(), layer.weight.size());
    get_doubles(in, layer.bias.data(), layer.bias.size());
    if (l + 1 < count) cfg.hidden_dims.push_back(static_cast<int>(out_dim));
    expect_in = static_cast<int>(out_dim);
    layers.push_back(std::move(layer));
  }
  if (expect_in != cfg.embed_dim) throw IoError("checkpoint output width mismatch");
  EmbeddingModel model(cfg);
  model.layers_ = std::move(layers);
  return model;
}

bool EmbeddingModel::operator==(const EmbeddingModel& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

PrototypeMatrix PrototypeMatrix::random(std::vector<ClassId> class_ids, int dim,
                                        std::uint64_t seed) {
  Rng rng(seed);
  PrototypeMatrix p;
  p.rows.resize(static_cast<Eigen::Index>(class_ids.size()), dim);
  for (Eigen::Index i = 0; i < p.rows.rows(); ++i)
    for (int j = 0; j < dim; ++j) p.rows(i, j) = rng.normal();
  normalize_rows(p.rows);
  p.class_ids = std::move(class_ids);
  p.trainable = true;
  return p;
}

std::optional<int> PrototypeMatrix::row_of(ClassId c) const {
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    if (class_ids[i] == c) return static_cast<int>(i);
  return std::nullopt;
}

std::vector<int> PrototypeMatrix::rows_for(const Labels& labels) const {
  std::vector<int> out;
  out.reserve(labels.size());
  if (class_ids.empty()) throw CoverageError("prototype matrix has no classes");
  const ClassId max_id = *std::max_element(class_ids.begin(), class_ids.end());
  std::vector<int> lookup(static_cast<std::size_t>(std::max(max_id, 0)) + 1, -1);
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    if (class_ids[i] >= 0) lookup[static_cast<std::size_t>(class_ids[i])] = static_cast<int>(i);
  for (ClassId c : labels) {
    const int row = (c >= 0 && c <= max_id) ? lookup[static_cast<std::size_t>(c)] : -1;
    if (row < 0) throw CoverageError("class " + std::to_string(c) + " has no prototype row");
    out.push_back(row);
  }
  return out;
}

bool PrototypeMatrix::covers(const std::vector<ClassId>& classes) const {
  for (ClassId c : classes)
    if (!row_of(c)) return false;
  return true;
}

std::uint64_t PrototypeMatrix::hash() const {
  Fnv1a h;
  h.update(rows);
  h.update(class_ids.data(), class_ids.size() * sizeof(ClassId));
  return h.digest();
}

void PrototypeMatrix::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kPrototypeMagic.data(), kPrototypeMagic.size());
  put<std::uint64_t>(out, static_cast<std::uint64_t>(rows.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(rows.cols()));
  put<std::uint8_t>(out, trainable ? 1 : 0);
  for (ClassId c : class_ids) put<std::int32_t>(out, c);
  put_doubles(out, rows.data(), rows.size());
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PrototypeMatrix PrototypeMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  check_magic(in, kPrototypeMagic);
  const auto n = get<std::uint64_t>(in);
  const auto d = get<std::uint64_t>(in);
  if (n > (1ULL << 24) || d > (1ULL << 24)) throw IoError("implausible prototype dimensions");
  PrototypeMatrix p;
  p.trainable = get<std::uint8_t>(in) != 0;
  p.class_ids.resize(n);
  for (auto& c : p.class_ids) c = get<std::int32_t>(in);
  p.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  get_doubles(in, p.rows.data(), p.rows.size());
  return p;
}

void ArcFaceParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("arcface.scale", "must be positive");
  if (!(margin >= 0.0 && margin < std::acos(0.0)))
    throw ConfigError("arcface.margin", "must lie in [0, pi/2)");
}

ArcFaceResult arcface_loss(const FeatureMatrix& features, std::span<const int> targets,
                           const PrototypeMatrix& prototypes, const ArcFaceParams& params) {
  params.validate();
  const Eigen::Index batch = features.rows();
  const Eigen::Index classes = prototypes.rows.rows();
  if (classes < 2)
    throw UndefinedLossError("arcface loss needs at least two prototypes (empty negative sum)");
  if (features.cols() != prototypes.rows.cols())
    throw ShapeError("feature width " + std::to_string(features.cols()) +
                     " does not match prototype width " + std::to_string(prototypes.rows.cols()));
  if (static_cast<Eigen::Index>(targets.size()) != batch)
    throw ShapeError("target count does not match batch size");
  if (batch == 0) throw ShapeError("empty batch");

  const double s = params.scale;
  const double cos_m = std::cos(params.margin);
  const double sin_m = std::sin(params.margin);

  const Matrix cosines = features * prototypes.rows.transpose();  // B x C
  // d(loss)/d(cosine), batch-averaged.
  Matrix dcos = Matrix::Zero(batch, classes);
  double total = 0.0;
  Vector logits(classes);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes)
      throw CoverageError("target row " + std::to_string(y) + " outside prototype range [0, " +
                          std::to_string(classes) + ")");
    const double raw = cosines(i, y);
    const double c = std::clamp(raw, -1.0 + kCosineClamp, 1.0 - kCosineClamp);
    const double sin_t = std::sqrt(1.0 - c * c);
    for (Eigen::Index j = 0; j < classes; ++j) logits[j] = s * cosines(i, j);
    logits[y] = s * (c * cos_m - sin_t * sin_m);

    const double peak = logits.maxCoeff();
    const Vector e = (logits.array() - peak).exp().matrix();
    const double z = e.sum();
    total += -(logits[y] - peak - std::log(z));

    // p_j - [j == y], then chain through the logit definitions.
    for (Eigen::Index j = 0; j < classes; ++j) {
      const double p = e[j] / z;
      dcos(i, j) = s * p / static_cast<double>(batch);
    }
    const double dlogit_y = (e[y] / z - 1.0) / static_cast<double>(batch);
    const bool clamped = raw != c;
    const double dlogit_dcos = clamped ? 0.0 : s * (cos_m + c * sin_m / sin_t);
    dcos(i, y) = dlogit_y * dlogit_dcos;
  }

  ArcFaceResult out;
  out.loss = total / static_cast<double>(batch);
  out.grad_features = dcos * prototypes.rows;
  if (prototypes.trainable) out.grad_prototypes = dcos.transpose() * features;
  return out;
}

void SgdOptimizer::step(EmbeddingModel& model, const ModelGradients& grads,
                        PrototypeMatrix* prototypes, const Matrix* prototype_grad,
                        const SgdParams& params) {
  auto& layers = model.layers();
  if (grads.weight.size() != layers.size() || grads.bias.size() != layers.size())
    throw ShapeError("gradient layer count does not match model");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() ||
        grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size())
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
  }
  const bool update_prototypes = prototypes && prototypes->trainable && prototype_grad;
  if (update_prototypes && (prototype_grad->rows() != prototypes->rows.rows() ||
                            prototype_grad->cols() != prototypes->rows.cols()))
    throw ShapeError("prototype gradient shape mismatch");
  if (!grads.all_finite() || (update_prototypes && !finite(*prototype_grad)))
    throw NumericalError("non-finite gradient; aborting update");

  if (weight_velocity_.size() != layers.size()) {
    weight_velocity_.clear();
    bias_velocity_.clear();
    for (const auto& layer : layers) {
      weight_velocity_.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
      bias_velocity_.push_back(Vector::Zero(layer.bias.size()));
    }
  }
  const double mu = params.momentum;
  const double wd = params.weight_decay;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    weight_velocity_[l] = mu * weight_velocity_[l] + grads.weight[l] + wd * layers[l].weight;
    bias_velocity_[l] = mu * bias_velocity_[l] + grads.bias[l] + wd * layers[l].bias;
    layers[l].weight -= params.lr * weight_velocity_[l];
    layers[l].bias -= params.lr * bias_velocity_[l];
  }

  if (update_prototypes) {
    auto& rows = prototypes->rows;
    if (prototype_velocity_.rows() != rows.rows() || prototype_velocity_.cols() != rows.cols())
      prototype_velocity_ = Matrix::Zero(rows.rows(), rows.cols());
    prototype_velocity_ = mu * prototype_velocity_ + *prototype_grad + wd * rows;
    rows -= params.lr * prototype_velocity_;
    normalize_rows(rows);
  }
}

}  // namespace ubct
